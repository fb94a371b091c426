"""
Binary checkpoint codec for trained networks.

Layout (little-endian):
    magic      8 bytes  b"FPALCKPT"
    version    uint32
    role       uint8    0 position, 1 signal
    skip       uint8    0 pairs, 1 none
    dims       4 x uint32  input_dim, hidden_width, n_hidden, output_dim
    normalizer uint32 feature count, then float64 means, stds, center (2), half extent (2)
    weights    float64, every layer W (row-major) then b
    checksum   32 bytes sha256 of everything above
"""

import hashlib
import struct
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from app.core.exceptions import CheckpointVersionError, CorruptCheckpointError
from app.models.network import Model, Normalizer
from app.schemas.neural import ModelArch, ModelRole, SkipPattern
from app.services.neural import TrainedModel
from app.services.storage import atomic_write_bytes, read_bytes


MAGIC = b"FPALCKPT"
FORMAT_VERSION = 1

_PREFIX = struct.Struct("<8sI")
_HEADER = struct.Struct("<BBIIIII")
_ROLE_CODES = {ModelRole.POSITION: 0, ModelRole.SIGNAL: 1}
_SKIP_CODES = {SkipPattern.PAIRS: 0, SkipPattern.NONE: 1}
_DIGEST_SIZE = hashlib.sha256().digest_size


def encode_checkpoint(model: Model, normalizer: Normalizer, role: ModelRole = ModelRole.POSITION) -> bytes:
    arch = model.arch
    n_features = int(normalizer.feature_means.size)
    parts = [
        _PREFIX.pack(MAGIC, FORMAT_VERSION),
        _HEADER.pack(
            _ROLE_CODES[role],
            _SKIP_CODES[arch.skip_pattern],
            arch.input_dim,
            arch.hidden_width,
            arch.n_hidden,
            arch.output_dim,
            n_features,
        ),
    ]
    for vector in (
        normalizer.feature_means,
        normalizer.feature_stds,
        normalizer.position_center,
        normalizer.position_half_extent,
    ):
        parts.append(np.ascontiguousarray(vector, dtype="<f8").tobytes())
    for w, b in model.layers:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(data: bytes, path: Optional[str] = None) -> Tuple[Model, Normalizer, ModelRole]:
    if len(data) < _PREFIX.size or data[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError("Not a checkpoint file", path=path)
    _, version = _PREFIX.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(version, FORMAT_VERSION, path=path)
    if len(data) < _PREFIX.size + _HEADER.size + _DIGEST_SIZE:
        raise CorruptCheckpointError("Checkpoint is truncated", path=path)

    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("Checkpoint checksum mismatch", path=path)

    role_code, skip_code, input_dim, hidden_width, n_hidden, output_dim, n_features = _HEADER.unpack_from(
        body, _PREFIX.size
    )
    try:
        role = {code: r for r, code in _ROLE_CODES.items()}[role_code]
        skip = {code: s for s, code in _SKIP_CODES.items()}[skip_code]
        arch = ModelArch(
            input_dim=input_dim,
            hidden_width=hidden_width,
            n_hidden=n_hidden,
            skip_pattern=skip,
            output_dim=output_dim,
        )
    except (KeyError, ValueError) as exc:
        raise CorruptCheckpointError(f"Invalid checkpoint header: {exc}", path=path)

    offset = _PREFIX.size + _HEADER.size
    expected = offset + 8 * (2 * n_features + 4 + arch.parameter_count)
    if expected != len(body):
        raise CorruptCheckpointError("Checkpoint size does not match its header", path=path)

    def take(count: int) -> np.ndarray:
        nonlocal offset
        values = np.frombuffer(body, dtype="<f8", count=count, offset=offset).astype(np.float64)
        offset += 8 * count
        return values

    normalizer = Normalizer(
        feature_means=take(n_features),
        feature_stds=take(n_features),
        position_center=take(2),
        position_half_extent=take(2),
    )
    layers = []
    for fan_in, fan_out in arch.layer_shapes():
        w = take(fan_in * fan_out).reshape(fan_in, fan_out)
        layers.append((w, take(fan_out)))
    return Model(arch=arch, layers=layers), normalizer, role


def save_checkpoint(
    model: Model,
    normalizer: Normalizer,
    path: Union[str, Path],
    role: ModelRole = ModelRole.POSITION,
) -> bytes:
    """Write a checkpoint atomically and return the bytes written."""
    data = encode_checkpoint(model, normalizer, role)
    atomic_write_bytes(path, data)
    return data


def load_checkpoint(path: Union[str, Path]) -> Tuple[Model, Normalizer]:
    model, normalizer, _ = decode_checkpoint(read_bytes(path), path=str(path))
    return model, normalizer


def load_trained_model(path: Union[str, Path]) -> TrainedModel:
    model, normalizer, role = decode_checkpoint(read_bytes(path), path=str(path))
    return TrainedModel(model=model, normalizer=normalizer, role=role)
