import hashlib
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.schemas.neural import ModelArch


Layer = Tuple[np.ndarray, np.ndarray]  # (W of shape (fan_in, fan_out), b of shape (fan_out,))


@dataclass
class Model:
    """Weights of a dense residual MLP.

    ``layers[0]`` is the input layer, ``layers[1:-1]`` the hidden layers and
    ``layers[-1]`` the linear output layer.
    """

    arch: ModelArch
    layers: List[Layer]

    def __repr__(self):
        return f"<Model(arch={self.arch.input_dim}->{self.arch.hidden_width}x{self.arch.n_hidden}->{self.arch.output_dim}, params={self.parameter_count})>"

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def copy(self) -> "Model":
        return Model(arch=self.arch, layers=[(w.copy(), b.copy()) for w, b in self.layers])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in self.layers)

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for w, b in self.layers:
            digest.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
            digest.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return digest.hexdigest()


FEATURE_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class Normalizer:
    """Feature standardization and metric position scaling to [-1, 1]"""

    feature_means: np.ndarray
    feature_stds: np.ndarray
    position_center: np.ndarray
    position_half_extent: np.ndarray

    def normalize_features(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_means) / self.feature_stds

    def denormalize_features(self, normalized: np.ndarray) -> np.ndarray:
        return normalized * self.feature_stds + self.feature_means

    def normalize_positions(self, positions: np.ndarray) -> np.ndarray:
        return (positions - self.position_center) / self.position_half_extent

    def denormalize_positions(self, normalized: np.ndarray) -> np.ndarray:
        return normalized * self.position_half_extent + self.position_center
