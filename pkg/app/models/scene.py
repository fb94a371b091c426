from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from app.schemas.scene import SceneConfig


@dataclass(frozen=True)
class Scene:
    """Factory hall with its BS layout"""

    config: SceneConfig
    bs_positions: np.ndarray  # (n_bs, 3) meters, row-major over the grid

    def __repr__(self):
        return f"<Scene({self.config.width_m}x{self.config.length_m} m, n_bs={self.n_bs})>"

    @property
    def n_bs(self) -> int:
        return int(self.bs_positions.shape[0])

    @property
    def center(self) -> np.ndarray:
        return np.array([self.config.width_m / 2.0, self.config.length_m / 2.0])

    @property
    def half_extents(self) -> np.ndarray:
        return np.array([self.config.width_m / 2.0, self.config.length_m / 2.0])


@dataclass(frozen=True)
class FieldGrid:
    """Regular node grid covering the scene rectangle"""

    nx: int
    ny: int
    step_x: float
    step_y: float

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    def node_coordinates(self) -> np.ndarray:
        """(n_nodes, 2) node positions, x fastest."""
        xs = np.arange(self.nx) * self.step_x
        ys = np.arange(self.ny) * self.step_y
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def bilinear(self, positions: np.ndarray, corr_dist_m: float):
        """Cell corner indices, bilinear weights and the exact std of the interpolant.

        Returns (iy, ix, weights, std) with weights of shape (n, 4) ordered
        (ix, iy), (ix+1, iy), (ix, iy+1), (ix+1, iy+1).
        """
        fx = positions[:, 0] / self.step_x
        fy = positions[:, 1] / self.step_y
        ix = np.clip(np.floor(fx).astype(np.int64), 0, self.nx - 2)
        iy = np.clip(np.floor(fy).astype(np.int64), 0, self.ny - 2)
        tx = fx - ix
        ty = fy - iy

        w00 = (1 - tx) * (1 - ty)
        w10 = tx * (1 - ty)
        w01 = (1 - tx) * ty
        w11 = tx * ty
        weights = np.column_stack([w00, w10, w01, w11])

        rho_x = np.exp(-self.step_x / corr_dist_m)
        rho_y = np.exp(-self.step_y / corr_dist_m)
        rho_d = np.exp(-np.hypot(self.step_x, self.step_y) / corr_dist_m)
        variance = (
            np.sum(weights ** 2, axis=1)
            + 2 * rho_x * (w00 * w10 + w01 * w11)
            + 2 * rho_y * (w00 * w01 + w10 * w11)
            + 2 * rho_d * (w00 * w11 + w10 * w01)
        )
        return iy, ix, weights, np.sqrt(variance)


@dataclass(frozen=True)
class ShadowAndLosFields:
    """Per-BS spatially consistent random fields of one channel realization.

    Node values are unit-variance Gaussian samples with exponential spatial
    correlation; queries interpolate bilinearly and divide by the exact
    interpolant std, so every query is again unit-variance.
    """

    grid: FieldGrid
    shadow_nodes: np.ndarray  # (n_bs, ny, nx)
    los_nodes: np.ndarray     # (n_bs, ny, nx)
    shadow_corr_dist_m: float
    los_corr_dist_m: float

    @property
    def n_bs(self) -> int:
        return int(self.shadow_nodes.shape[0])

    def _query(self, nodes: np.ndarray, positions: np.ndarray, corr_dist_m: float) -> np.ndarray:
        iy, ix, weights, std = self.grid.bilinear(positions, corr_dist_m)
        values = (
            weights[:, 0:1] * nodes[:, iy, ix].T
            + weights[:, 1:2] * nodes[:, iy, ix + 1].T
            + weights[:, 2:3] * nodes[:, iy + 1, ix].T
            + weights[:, 3:4] * nodes[:, iy + 1, ix + 1].T
        )
        return values / std[:, np.newaxis]

    def shadow_unit(self, positions: np.ndarray) -> np.ndarray:
        """(n, n_bs) standard-normal shadowing draws; scale by sigma_sf for dB."""
        return self._query(self.shadow_nodes, positions, self.shadow_corr_dist_m)

    def los_uniform(self, positions: np.ndarray) -> np.ndarray:
        """(n, n_bs) correlated uniform values; a link is LOS when below P_LOS."""
        return norm.cdf(self._query(self.los_nodes, positions, self.los_corr_dist_m))
