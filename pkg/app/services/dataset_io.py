"""Delimited-text files for generated pools.

Columns are x_m, y_m, one path gain and one LOS flag per kept BS, then
pool_index. The trailing pool_index column is an extension of the listed
layout: it keeps each sample's identity in the full pool so reloaded files
split into the same D1 and candidates.
"""

import io
import json
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from app.core.exceptions import ArtifactIOError
from app.models.dataset import Dataset
from app.schemas.scene import SceneConfig
from app.services.storage import atomic_write_text, read_text


FORMAT_TAG = "# fplab-dataset v1"


def dataset_to_text(dataset: Dataset, scene_config: SceneConfig) -> str:
    n_bs = dataset.n_features
    # extension: trailing pool_index after the x, y, path gain and LOS columns
    columns = (
        ["x_m", "y_m"]
        + [f"pg_db_{b}" for b in dataset.bs_ids]
        + [f"los_{b}" for b in dataset.bs_ids]
        + ["pool_index"]
    )
    header = "\n".join([
        FORMAT_TAG,
        f"# scene: {scene_config.model_dump_json()}",
        f"# seed: {dataset.seed}",
        f"# bs_ids: {','.join(str(b) for b in dataset.bs_ids)}",
        ",".join(columns),
    ])
    table = np.column_stack([
        dataset.positions,
        dataset.features,
        dataset.los_flags.astype(np.float64),
        dataset.pool_indices.astype(np.float64),
    ])
    buffer = io.StringIO()
    np.savetxt(buffer, table, fmt=["%.17g"] * (2 + n_bs) + ["%d"] * (n_bs + 1), delimiter=",")
    return header + "\n" + buffer.getvalue()


def save_dataset(dataset: Dataset, scene_config: SceneConfig, path: Union[str, Path]) -> str:
    """Write the pool with a header echoing the scene and seed; returns the text written."""
    text = dataset_to_text(dataset, scene_config)
    atomic_write_text(path, text)
    return text


def _header_value(line: str, prefix: str, path: str) -> str:
    if not line.startswith(prefix):
        raise ArtifactIOError(f"Expected '{prefix}' header in {path}", path=path, operation="read")
    return line[len(prefix):].strip()


def load_dataset(path: Union[str, Path]) -> Tuple[Dataset, SceneConfig]:
    """Read a file written by ``save_dataset``."""
    path = str(path)
    lines = read_text(path).splitlines()
    if len(lines) < 5 or lines[0] != FORMAT_TAG:
        raise ArtifactIOError(f"{path} is not a dataset file", path=path, operation="read")

    try:
        scene_config = SceneConfig.model_validate_json(_header_value(lines[1], "# scene:", path))
        seed = int(_header_value(lines[2], "# seed:", path))
        bs_ids = tuple(int(b) for b in _header_value(lines[3], "# bs_ids:", path).split(","))
    except (PydanticValidationError, ValueError) as exc:
        raise ArtifactIOError(f"Invalid dataset header in {path}: {exc}", path=path, operation="read")

    n_bs = len(bs_ids)
    width = 3 + 2 * n_bs
    if len(lines[4].split(",")) != width:
        raise ArtifactIOError(f"Column header of {path} does not match bs_ids", path=path, operation="read")
    body = "\n".join(lines[5:])
    try:
        table = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2) if body.strip() else np.empty((0, width))
    except ValueError as exc:
        raise ArtifactIOError(f"Invalid dataset row in {path}: {exc}", path=path, operation="read")
    if table.shape[1] != width:
        raise ArtifactIOError(f"Rows of {path} have {table.shape[1]} columns, expected {width}", path=path, operation="read")

    dataset = Dataset(
        positions=table[:, 0:2].copy(),
        features=table[:, 2:2 + n_bs].copy(),
        los_flags=table[:, 2 + n_bs:2 + 2 * n_bs] > 0.5,
        bs_ids=bs_ids,
        pool_indices=table[:, -1].astype(np.int64),
        seed=seed,
    )
    return dataset, scene_config
