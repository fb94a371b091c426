import hashlib
import logging
import os
import tempfile
from pathlib import Path
from typing import List, Optional, Union

from app.core.exceptions import ArtifactIOError
from app.core.logging import experiment_logger
from app.schemas.experiment import ArtifactRecord


logger = logging.getLogger("fplab.artifacts")

PathLike = Union[str, Path]


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as handle:
            for block in iter(lambda: handle.read(1 << 20), b""):
                digest.update(block)
    except OSError as exc:
        raise ArtifactIOError(f"Cannot read {path}: {exc.strerror}", path=str(path), operation="read")
    return digest.hexdigest()


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
            os.replace(temp_name, path)
        except BaseException:
            if os.path.exists(temp_name):
                os.unlink(temp_name)
            raise
    except OSError as exc:
        raise ArtifactIOError(f"Cannot write {path}: {exc.strerror}", path=str(path), operation="write")


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"Cannot read {path}: {exc.strerror}", path=str(path), operation="read")


def read_text(path: PathLike) -> str:
    return read_bytes(path).decode("utf-8")


class ArtifactStore:
    """Output directory that records a checksum for every file it writes"""

    def __init__(self, root: PathLike):
        self.root = Path(root)
        self.records: List[ArtifactRecord] = []

    def path_for(self, relative: str) -> Path:
        return self.root / relative

    def write_bytes(self, relative: str, data: bytes) -> ArtifactRecord:
        """Atomically write ``data`` under the root and record it."""
        atomic_write_bytes(self.path_for(relative), data)
        record = ArtifactRecord(path=Path(relative).as_posix(), sha256=sha256_bytes(data), bytes=len(data))
        self.records = [r for r in self.records if r.path != record.path] + [record]
        experiment_logger.log_artifact_written(str(self.path_for(relative)), {"sha256": record.sha256, "bytes": record.bytes})
        return record

    def write_text(self, relative: str, text: str) -> ArtifactRecord:
        return self.write_bytes(relative, text.encode("utf-8"))

    def adopt(self, relative: str) -> ArtifactRecord:
        """Record a file some other writer already placed under the root."""
        path = self.path_for(relative)
        record = ArtifactRecord(path=Path(relative).as_posix(), sha256=sha256_file(path), bytes=path.stat().st_size)
        self.records = [r for r in self.records if r.path != record.path] + [record]
        return record

    def check(self, record: ArtifactRecord) -> Optional[str]:
        """Current checksum of a recorded file, or None when it is missing."""
        path = self.path_for(record.path)
        if not path.is_file():
            return None
        return sha256_file(path)
