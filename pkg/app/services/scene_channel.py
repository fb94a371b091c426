"""
InF-DH statistical channel and fingerprint dataset generation.

Builds the factory scene, draws spatially consistent shadowing and LOS
fields per BS, and turns uniformly drawn positions into path-gain
fingerprints. Every generator is a pure function of (config, seed).
"""

import logging
import math
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError as PydanticValidationError
from scipy.linalg import cholesky

from app.core.exceptions import (
    DistanceTooSmallError,
    InvalidSceneConfigError,
    PoolTooSmallError,
    UnknownBSIndexError,
)
from app.core.logging import log_function_call
from app.core.seeding import derive_seed
from app.core.validation import ArrayValidator
from app.models.dataset import Dataset
from app.models.scene import FieldGrid, Scene, ShadowAndLosFields
from app.schemas.scene import SceneConfig


logger = logging.getLogger("fplab.channel")

# Spatially spread picks from the 3x6 default grid (index = 3 * row + column)
DEFAULT_BS_SUBSETS: Dict[int, Tuple[int, ...]] = {
    12: (0, 2, 3, 5, 6, 8, 9, 11, 12, 14, 15, 17),  # both outer columns
    8: (0, 2, 4, 7, 10, 13, 15, 17),                # corners plus the inner centre column
    4: (0, 2, 15, 17),                              # corners
}

POSITION_CHUNK = 16384


def _revalidate(config: SceneConfig) -> SceneConfig:
    """Re-run validation so unchecked instances (model_construct) cannot slip through."""
    try:
        return SceneConfig.model_validate(config.model_dump())
    except PydanticValidationError as exc:
        error = exc.errors()[0]
        field = ".".join(str(loc) for loc in error["loc"]) or None
        raise InvalidSceneConfigError(error["msg"], field=field, value=error.get("input"))


def build_scene(config: SceneConfig) -> Scene:
    """Place the BS grid, half a spacing from the walls, indexed row-major (y is the row)."""
    config = _revalidate(config)
    xs = config.bs_axis(config.width_m)
    ys = config.bs_axis(config.length_m)
    bs_positions = np.array([(x, y, config.bs_height_m) for y in ys for x in xs], dtype=np.float64)
    return Scene(config=config, bs_positions=bs_positions)


def los_probability(scene: Scene, d2d):
    """InF-DH LOS probability exp(-d2d / k_subsce)."""
    cfg = scene.config
    k = (
        -(cfg.clutter_size_m / math.log(1.0 - cfg.clutter_density))
        * (cfg.bs_height_m - cfg.ue_height_m)
        / (cfg.clutter_height_m - cfg.ue_height_m)
    )
    return np.exp(-np.asarray(d2d, dtype=np.float64) / k)


def path_loss(scene: Scene, d3d, los):
    """InF-DH path loss in dB; NLOS is floored by the LOS value."""
    d3d = np.asarray(d3d, dtype=np.float64)
    if np.any(d3d < 1.0):
        raise DistanceTooSmallError(float(np.min(d3d)))
    fc = scene.config.carrier_ghz
    pl_los = 31.84 + 21.50 * np.log10(d3d) + 19.00 * np.log10(fc)
    pl_nlos = np.maximum(pl_los, 33.63 + 21.9 * np.log10(d3d) + 20.0 * np.log10(fc))
    return np.where(los, pl_los, pl_nlos)


def field_grid(config: SceneConfig) -> FieldGrid:
    nx = max(2, int(math.ceil(config.width_m / config.field_grid_step_m - 1e-9)) + 1)
    ny = max(2, int(math.ceil(config.length_m / config.field_grid_step_m - 1e-9)) + 1)
    return FieldGrid(nx=nx, ny=ny, step_x=config.width_m / (nx - 1), step_y=config.length_m / (ny - 1))


@lru_cache(maxsize=4)
def _correlation_factor(grid: FieldGrid, corr_dist_m: float) -> np.ndarray:
    """Lower Cholesky factor of the exponential covariance over the grid nodes."""
    nodes = grid.node_coordinates()
    diff = nodes[:, np.newaxis, :] - nodes[np.newaxis, :, :]
    covariance = np.exp(-np.sqrt(np.sum(diff ** 2, axis=-1)) / corr_dist_m)
    covariance[np.diag_indices_from(covariance)] += 1e-10
    factor = cholesky(covariance, lower=True)
    logger.debug(
        f"Factorized {grid.n_nodes}-node covariance",
        extra={"details": {"nx": grid.nx, "ny": grid.ny, "corr_dist_m": corr_dist_m}}
    )
    return factor


def generate_fields(scene: Scene, seed: int) -> ShadowAndLosFields:
    """Independent shadowing and LOS fields for each BS, fixed by ``seed``."""
    cfg = scene.config
    grid = field_grid(cfg)
    shadow_factor = _correlation_factor(grid, cfg.shadow_corr_dist_m)
    los_factor = _correlation_factor(grid, cfg.los_corr_dist_m)

    shadow_white = np.empty((grid.n_nodes, scene.n_bs))
    los_white = np.empty((grid.n_nodes, scene.n_bs))
    for b, child in enumerate(np.random.SeedSequence(seed).spawn(scene.n_bs)):
        shadow_seq, los_seq = child.spawn(2)
        shadow_white[:, b] = np.random.default_rng(shadow_seq).standard_normal(grid.n_nodes)
        los_white[:, b] = np.random.default_rng(los_seq).standard_normal(grid.n_nodes)

    shadow_nodes = (shadow_factor @ shadow_white).T.reshape(scene.n_bs, grid.ny, grid.nx)
    los_nodes = (los_factor @ los_white).T.reshape(scene.n_bs, grid.ny, grid.nx)
    return ShadowAndLosFields(
        grid=grid,
        shadow_nodes=np.ascontiguousarray(shadow_nodes),
        los_nodes=np.ascontiguousarray(los_nodes),
        shadow_corr_dist_m=cfg.shadow_corr_dist_m,
        los_corr_dist_m=cfg.los_corr_dist_m,
    )


def path_gain_matrix(
    scene: Scene,
    fields: ShadowAndLosFields,
    positions: np.ndarray,
    force_los: Optional[bool] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Path gains (n, n_bs) in dB and LOS flags for many positions."""
    cfg = scene.config
    positions = ArrayValidator.as_matrix(positions, width=2, name="positions")
    ArrayValidator.ensure_in_scene(positions, cfg.width_m, cfg.length_m)

    d2d = np.sqrt(
        (positions[:, np.newaxis, 0] - scene.bs_positions[np.newaxis, :, 0]) ** 2
        + (positions[:, np.newaxis, 1] - scene.bs_positions[np.newaxis, :, 1]) ** 2
    )
    d3d = np.maximum(np.sqrt(d2d ** 2 + (cfg.bs_height_m - cfg.ue_height_m) ** 2), 1.0)

    if force_los is None:
        los = fields.los_uniform(positions) < los_probability(scene, d2d)
    else:
        los = np.full(d2d.shape, bool(force_los))

    sigma = np.where(los, cfg.sigma_sf_los_db, cfg.sigma_sf_nlos_db)
    shadowing = sigma * fields.shadow_unit(positions)
    return shadowing - path_loss(scene, d3d, los), los


def path_gain_vector(
    scene: Scene,
    fields: ShadowAndLosFields,
    position: Sequence[float],
    force_los: Optional[bool] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """PG_b = SF_b(position) - PL_b for every BS, plus the per-BS LOS flags."""
    gains, los = path_gain_matrix(scene, fields, np.asarray(position, dtype=np.float64)[np.newaxis, :], force_los)
    return gains[0], los[0]


@log_function_call(logger)
def generate_pool(scene: Scene, n_points: int, seed: int) -> Dataset:
    """Uniform positions over the rectangle sharing one field realization."""
    if n_points < 1:
        raise PoolTooSmallError(n_points, 0)
    cfg = scene.config
    rng = np.random.default_rng(derive_seed(seed, "positions"))
    positions = np.column_stack([
        rng.uniform(0.0, cfg.width_m, n_points),
        rng.uniform(0.0, cfg.length_m, n_points),
    ])
    fields = generate_fields(scene, derive_seed(seed, "fields"))

    features = np.empty((n_points, scene.n_bs))
    los_flags = np.empty((n_points, scene.n_bs), dtype=bool)
    for start in range(0, n_points, POSITION_CHUNK):
        stop = min(start + POSITION_CHUNK, n_points)
        features[start:stop], los_flags[start:stop] = path_gain_matrix(scene, fields, positions[start:stop])

    logger.info(
        f"Generated pool of {n_points} positions",
        extra={"seed": seed, "details": {"los_share": float(np.mean(los_flags))}}
    )
    return Dataset(
        positions=positions,
        features=features,
        los_flags=los_flags,
        bs_ids=tuple(range(scene.n_bs)),
        pool_indices=np.arange(n_points, dtype=np.int64),
        seed=seed,
    )


def subsample_bs(dataset: Dataset, keep: Sequence[int]) -> Dataset:
    """Keep only the listed BS columns (strictly increasing, subset of bs_ids)."""
    keep = [int(b) for b in keep]
    if (
        not keep
        or any(a >= b for a, b in zip(keep, keep[1:]))
        or not set(keep) <= set(dataset.bs_ids)
    ):
        raise UnknownBSIndexError(keep, dataset.bs_ids)
    columns = [dataset.bs_ids.index(b) for b in keep]
    return Dataset(
        positions=dataset.positions,
        features=dataset.features[:, columns],
        los_flags=dataset.los_flags[:, columns],
        bs_ids=tuple(keep),
        pool_indices=dataset.pool_indices,
        seed=dataset.seed,
    )


def default_bs_subset(n_bs_total: int, count: int) -> List[int]:
    """Documented subset for the 18-BS grid, else evenly spread indices."""
    if count == n_bs_total:
        return list(range(n_bs_total))
    if n_bs_total == 18 and count in DEFAULT_BS_SUBSETS:
        return list(DEFAULT_BS_SUBSETS[count])
    return sorted({int(round(i)) for i in np.linspace(0, n_bs_total - 1, count)})


def partition_pool(pool: Dataset, n: int, seed: int) -> Tuple[Dataset, Dataset, Dataset]:
    """Random disjoint D1 (n), candidates (n) and the rest of the pool."""
    if n < 0 or 2 * n > len(pool):
        raise PoolTooSmallError(len(pool), n)
    order = np.random.default_rng(seed).permutation(len(pool))
    return pool.take(order[:n]), pool.take(order[n:2 * n]), pool.take(order[2 * n:])
