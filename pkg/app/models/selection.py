from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from app.schemas.experiment import SelectionMethod


@dataclass(frozen=True)
class SelectionResult:
    """Candidates chosen by one strategy"""

    method: SelectionMethod
    n_candidates: int
    selected_indices: np.ndarray           # sorted candidate-local indices
    scores: Optional[np.ndarray] = None    # per-candidate error in meters; None for random

    def __repr__(self):
        return f"<SelectionResult(method={self.method.value}, k={self.k}, n={self.n_candidates})>"

    @property
    def k(self) -> int:
        return int(self.selected_indices.size)

    def selected_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_candidates, dtype=bool)
        mask[self.selected_indices] = True
        return mask

    def unselected_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.selected_mask())

    def to_rows(self) -> List[List[str]]:
        """candidate_index, score (empty for random), selected flag."""
        mask = self.selected_mask()
        rows = []
        for i in range(self.n_candidates):
            score = "" if self.scores is None else f"{self.scores[i]:.17g}"
            rows.append([str(i), score, "1" if mask[i] else "0"])
        return rows
