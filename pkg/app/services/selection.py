"""
Data-selection strategies over a candidate set.

Random picks uniformly; genie ranks candidates by the position model's
error on their true path gains; practical ranks them by the error on path
gains predicted from the candidate position by the signal model.
"""

import logging
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional

import numpy as np

from app.core.exceptions import DimensionMismatchError
from app.core.validation import ArrayValidator
from app.models.dataset import Dataset
from app.models.selection import SelectionResult
from app.schemas.experiment import SelectionMethod
from app.services.neural import TrainedModel


logger = logging.getLogger("fplab.selection")


def selection_size(x_percent: float, n_candidates: int) -> int:
    """k = round(X * N / 100), halves rounded up."""
    exact = Decimal(repr(float(x_percent))) * n_candidates / 100
    return int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def positioning_errors(nn1a: TrainedModel, samples: Dataset) -> np.ndarray:
    """Euclidean distance in meters between predicted and true positions, in input order."""
    if samples.n_features != nn1a.model.arch.input_dim:
        raise DimensionMismatchError(
            "sample features do not match the position model input",
            expected=nn1a.model.arch.input_dim,
            actual=samples.n_features
        )
    predicted = nn1a.predict_positions(samples.features)
    return np.linalg.norm(predicted - samples.positions, axis=1)


def top_k_indices(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores, lower index first on ties; returned sorted."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    ArrayValidator.ensure_selection_size(k, scores.size)
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def select_random(n_candidates: int, k: int, seed: int) -> SelectionResult:
    """Uniform draw of k candidates without replacement."""
    ArrayValidator.ensure_selection_size(k, n_candidates)
    chosen = np.random.default_rng(seed).choice(n_candidates, size=k, replace=False)
    return SelectionResult(
        method=SelectionMethod.RANDOM,
        n_candidates=n_candidates,
        selected_indices=np.sort(chosen.astype(np.int64)),
    )


def _ranked(method: SelectionMethod, scores: np.ndarray, k: int) -> SelectionResult:
    selected = top_k_indices(scores, k)
    if k:
        logger.debug(
            f"{method.value} selected {k} of {scores.size} candidates",
            extra={"strategy": method.value, "details": {"min_selected_score_m": float(scores[selected].min())}}
        )
    return SelectionResult(method=method, n_candidates=int(scores.size), selected_indices=selected, scores=scores)


def select_genie(nn1a: TrainedModel, candidates: Dataset, k: int) -> SelectionResult:
    """Rank candidates by the position error on their true path gains."""
    ArrayValidator.ensure_selection_size(k, len(candidates))
    return _ranked(SelectionMethod.GENIE, positioning_errors(nn1a, candidates), k)


def select_practical(
    nn1a: TrainedModel,
    nn1b: TrainedModel,
    candidate_positions,
    true_positions_for_scoring: Optional[np.ndarray],
    k: int,
) -> SelectionResult:
    """Rank candidates by the position error on path gains estimated from their position.

    ``true_positions_for_scoring`` defaults to the candidate positions
    themselves, the only datum available for an unmeasured candidate.
    """
    if nn1b.model.arch.output_dim != nn1a.model.arch.input_dim:
        raise DimensionMismatchError(
            "signal model output does not match the position model input",
            expected=nn1a.model.arch.input_dim,
            actual=nn1b.model.arch.output_dim
        )
    positions = ArrayValidator.as_matrix(candidate_positions, width=2, name="candidate positions")
    reference = positions if true_positions_for_scoring is None else ArrayValidator.as_matrix(
        true_positions_for_scoring, width=2, name="scoring positions"
    )
    ArrayValidator.ensure_same_shape(positions, reference, name="candidate and scoring positions")
    ArrayValidator.ensure_selection_size(k, positions.shape[0])

    estimated_signals = nn1b.predict_signals(positions)
    predicted = nn1a.predict_positions(estimated_signals)
    scores = np.linalg.norm(predicted - reference, axis=1)
    return _ranked(SelectionMethod.PRACTICAL, scores, k)
