"""
Array validation utilities.

Shape, finiteness and range checks shared by the channel, neural and
selection services. Every check raises one of the lab exceptions so the
command line can map it to an exit code.
"""

from typing import Optional, Sequence

import numpy as np

from app.core.exceptions import (
    DimensionMismatchError,
    EmptyInputError,
    PositionOutOfSceneError,
    SelectionSizeError,
)


class ArrayValidator:
    """Shape and content checks for numpy inputs."""

    @staticmethod
    def as_matrix(values, width: Optional[int] = None, name: str = "input") -> np.ndarray:
        """Return a 2-D float64 view, promoting a single vector to one row."""
        array = np.asarray(values, dtype=np.float64)
        if array.ndim == 1:
            array = array[np.newaxis, :]
        if array.ndim != 2:
            raise DimensionMismatchError(
                f"{name} must be a vector or a matrix",
                expected="1-D or 2-D",
                actual=array.ndim
            )
        if width is not None and array.shape[1] != width:
            raise DimensionMismatchError(
                f"{name} has {array.shape[1]} columns, expected {width}",
                expected=width,
                actual=array.shape[1]
            )
        return array

    @staticmethod
    def ensure_same_shape(left: np.ndarray, right: np.ndarray, name: str = "arrays") -> None:
        """Require two arrays of identical shape."""
        if np.shape(left) != np.shape(right):
            raise DimensionMismatchError(
                f"{name} differ in shape",
                expected=list(np.shape(left)),
                actual=list(np.shape(right))
            )

    @staticmethod
    def ensure_non_empty(values: Sequence, name: str = "input") -> None:
        """Require at least one element."""
        if len(values) == 0:
            raise EmptyInputError(name)

    @staticmethod
    def ensure_in_scene(positions: np.ndarray, width_m: float, length_m: float) -> None:
        """Require every (x, y) to lie in [0, width] x [0, length]."""
        positions = np.atleast_2d(positions)
        inside = (
            (positions[:, 0] >= 0.0) & (positions[:, 0] <= width_m)
            & (positions[:, 1] >= 0.0) & (positions[:, 1] <= length_m)
        )
        if not np.all(inside):
            first_bad = positions[int(np.argmin(inside))]
            raise PositionOutOfSceneError(first_bad.tolist(), width_m, length_m)

    @staticmethod
    def ensure_selection_size(k: int, n_candidates: int) -> None:
        """Require 0 <= k <= n_candidates."""
        if k < 0 or k > n_candidates:
            raise SelectionSizeError(k, n_candidates)
