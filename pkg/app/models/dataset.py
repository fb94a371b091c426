import hashlib
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from app.core.exceptions import DimensionMismatchError


@dataclass(frozen=True)
class Sample:
    """One (path-gain vector, position) couple"""

    position: np.ndarray   # (2,) meters
    features: np.ndarray   # (n_bs,) dB
    los_flags: np.ndarray  # (n_bs,) bool, diagnostic only
    pool_index: int


@dataclass(frozen=True)
class Dataset:
    """Column-stored fingerprint dataset.

    Row i is sample i; ``pool_indices`` keeps each row's index in the pool it
    was drawn from so splits can be checked with set algebra.
    """

    positions: np.ndarray    # (n, 2)
    features: np.ndarray     # (n, n_bs)
    los_flags: np.ndarray    # (n, n_bs) bool
    bs_ids: Tuple[int, ...]
    pool_indices: np.ndarray  # (n,) int64
    seed: int = 0

    def __repr__(self):
        return f"<Dataset(n={len(self)}, bs_ids={list(self.bs_ids)}, seed={self.seed})>"

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    def __getitem__(self, i: int) -> Sample:
        return Sample(
            position=self.positions[i],
            features=self.features[i],
            los_flags=self.los_flags[i],
            pool_index=int(self.pool_indices[i]),
        )

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def samples(self) -> List[Sample]:
        return list(self)

    @property
    def n_features(self) -> int:
        return len(self.bs_ids)

    def take(self, rows: Sequence[int]) -> "Dataset":
        """Rows in the given order."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            positions=self.positions[rows],
            features=self.features[rows],
            los_flags=self.los_flags[rows],
            bs_ids=self.bs_ids,
            pool_indices=self.pool_indices[rows],
            seed=self.seed,
        )

    def concat(self, other: "Dataset") -> "Dataset":
        if other.bs_ids != self.bs_ids:
            raise DimensionMismatchError(
                "cannot concatenate datasets with different BS columns",
                expected=list(self.bs_ids),
                actual=list(other.bs_ids)
            )
        return Dataset(
            positions=np.concatenate([self.positions, other.positions]),
            features=np.concatenate([self.features, other.features]),
            los_flags=np.concatenate([self.los_flags, other.los_flags]),
            bs_ids=self.bs_ids,
            pool_indices=np.concatenate([self.pool_indices, other.pool_indices]),
            seed=self.seed,
        )

    def content_hash(self) -> str:
        """sha256 over indices, positions and features."""
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.pool_indices, dtype="<i8").tobytes())
        digest.update(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        digest.update(",".join(map(str, self.bs_ids)).encode())
        return digest.hexdigest()
