"""
Experiment protocol.

One realization at one BS count: draw the pool, split it into D1, the
candidates and the rest, train the position model on D1, let a strategy
pick k candidates, fine-tune on D2 = D1 + selected and compare Q(0.9)
before and after on both test sets. Strategies at the same
(realization, BS count) share D1, the candidates, the initial model and
its Q(0.9): measured once on all candidates (test1) and on the pool minus
D1 (test2), so every gain is taken against the same D1-only reference.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_CEILING, Decimal
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import (
    EmptyInputError,
    ProtocolInvariantError,
    TrainingDivergenceError,
    ZeroInitialErrorError,
)
from app.core.logging import experiment_logger, log_function_call
from app.core.seeding import derive_seed
from app.models.dataset import Dataset
from app.models.scene import Scene
from app.models.selection import SelectionResult
from app.schemas.experiment import (
    STRATEGY_ORDER,
    ExperimentConfig,
    RealizationResult,
    RealizationStatus,
    SelectionMethod,
    Strategy,
    SummaryRow,
    SummaryTable,
    TestMetrics,
    TestSet,
)
from app.schemas.neural import ModelRole
from app.schemas.scene import SceneConfig
from app.services.checkpoint import save_checkpoint
from app.services.neural import TrainedModel, fine_tune_model, train_model
from app.services.scene_channel import (
    build_scene,
    default_bs_subset,
    generate_pool,
    partition_pool,
    subsample_bs,
)
from app.services.selection import (
    positioning_errors,
    select_genie,
    select_practical,
    select_random,
    selection_size,
)
from app.services.storage import atomic_write_text


logger = logging.getLogger("fplab.protocol")

QUANTILE = 0.9


# Metrics

def q_quantile(errors, q: float = QUANTILE) -> float:
    """Nearest-rank quantile: the ceil(q * n)-th smallest error."""
    values = np.sort(np.asarray(errors, dtype=np.float64).reshape(-1))
    if values.size == 0:
        raise EmptyInputError("error vector")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"quantile level must lie in (0, 1], got {q}")
    rank = int((Decimal(repr(float(q))) * values.size).to_integral_value(rounding=ROUND_CEILING))
    return float(values[max(rank, 1) - 1])


def gain(q90_initial: float, q90_after: float) -> float:
    """G = 1 - after / initial."""
    if not q90_initial > 0.0:
        raise ZeroInitialErrorError(q90_initial)
    return 1.0 - q90_after / q90_initial


# Seeds

def realization_seed(config: ExperimentConfig, realization: int) -> int:
    return derive_seed(config.base_seed, "realization", realization)


def stage_seeds(config: ExperimentConfig, realization: int, bs_count: int) -> Dict[str, int]:
    """Seeds of every stage of one (realization, BS count) job except per-strategy ones."""
    root = realization_seed(config, realization)
    return {
        "realization": root,
        "pool": derive_seed(root, "pool"),
        "partition": derive_seed(root, "partition"),
        "nn1a": derive_seed(root, "nn1a", bs_count),
        "nn1b": derive_seed(root, "nn1b", bs_count),
    }


def strategy_seeds(config: ExperimentConfig, realization: int, bs_count: int, strategy: Strategy) -> Dict[str, int]:
    root = realization_seed(config, realization)
    return {
        "select": derive_seed(root, "select", strategy.value),
        "fine_tune": derive_seed(root, "fine_tune", strategy.value, bs_count),
    }


def bs_subset_for(config: ExperimentConfig, n_bs_total: int, bs_count: int) -> List[int]:
    if bs_count in config.bs_subsets:
        return list(config.bs_subsets[bs_count])
    return default_bs_subset(n_bs_total, bs_count)


@lru_cache(maxsize=2)
def _cached_pool(scene_config: SceneConfig, pool_size: int, seed: int) -> Tuple[Scene, Dataset]:
    scene = build_scene(scene_config)
    return scene, generate_pool(scene, pool_size, seed)


def realization_pool(config: ExperimentConfig, realization: int) -> Tuple[Scene, Dataset]:
    """Scene and full-BS pool of one realization (cached per process)."""
    seed = derive_seed(realization_seed(config, realization), "pool")
    return _cached_pool(config.scene, config.pool_size, seed)


# Realizations

@dataclass
class RealizationContext:
    """Everything strategies share at one (realization, BS count)"""

    config: ExperimentConfig
    realization: int
    bs_count: int
    seeds: Dict[str, int]
    scene: Scene
    pool: Dataset
    d1: Dataset
    candidates: Dataset
    rest: Dataset
    nn1a: Optional[TrainedModel] = None
    nn1a_error: Optional[TrainingDivergenceError] = None
    initial_q90: Dict[TestSet, float] = field(default_factory=dict)
    _nn1b: Optional[TrainedModel] = field(default=None, repr=False)

    def __repr__(self):
        return f"<RealizationContext(realization={self.realization}, bs_count={self.bs_count})>"

    @property
    def seed(self) -> int:
        return self.seeds["realization"]

    def nn1b(self) -> TrainedModel:
        """Signal model trained on D1 with input and label swapped; built on first use."""
        if self._nn1b is None:
            self._nn1b = train_model(self.d1, self.scene, self.config.train, ModelRole.SIGNAL, self.seeds["nn1b"])
        return self._nn1b

    @property
    def has_nn1b(self) -> bool:
        return self._nn1b is not None


def prepare_realization(config: ExperimentConfig, bs_count: int, realization: int) -> RealizationContext:
    """Pool, split and initial position model for one (realization, BS count)."""
    seeds = stage_seeds(config, realization, bs_count)
    scene, full_pool = realization_pool(config, realization)
    pool = subsample_bs(full_pool, bs_subset_for(config, scene.n_bs, bs_count))
    d1, candidates, rest = partition_pool(pool, config.n, seeds["partition"])
    experiment_logger.log_realization_started(realization, bs_count, seeds["realization"])

    context = RealizationContext(
        config=config,
        realization=realization,
        bs_count=bs_count,
        seeds=seeds,
        scene=scene,
        pool=pool,
        d1=d1,
        candidates=candidates,
        rest=rest,
    )
    try:
        context.nn1a = train_model(d1, scene, config.train, ModelRole.POSITION, seeds["nn1a"])
    except TrainingDivergenceError as exc:
        context.nn1a_error = exc
    else:
        context.initial_q90 = {
            TestSet.TEST1: q_quantile(positioning_errors(context.nn1a, candidates)),
            TestSet.TEST2: q_quantile(positioning_errors(context.nn1a, rest.concat(candidates))),
        }
    return context


def _select(context: RealizationContext, strategy: Strategy, k: int, seed: int) -> SelectionResult:
    method = strategy.method
    if method == SelectionMethod.RANDOM:
        return select_random(len(context.candidates), k, seed)
    if method == SelectionMethod.GENIE:
        return select_genie(context.nn1a, context.candidates, k)
    return select_practical(context.nn1a, context.nn1b(), context.candidates.positions, None, k)


def check_partition(
    pool: Dataset,
    d1: Dataset,
    candidates: Dataset,
    selected: Dataset,
    test1: Dataset,
    test2: Dataset,
    test1_is_candidates: bool,
) -> None:
    """Index-set bookkeeping of one realization; raises on any violation."""
    pool_ids = set(pool.pool_indices.tolist())
    d1_ids = set(d1.pool_indices.tolist())
    cand_ids = set(candidates.pool_indices.tolist())
    sel_ids = set(selected.pool_indices.tolist())
    test1_ids = set(test1.pool_indices.tolist())
    test2_ids = set(test2.pool_indices.tolist())

    problems = []
    if d1_ids & cand_ids:
        problems.append("D1 and candidates overlap")
    if not sel_ids <= cand_ids or len(sel_ids) != len(selected):
        problems.append("selection is not a set of distinct candidates")
    if not test1_is_candidates:
        if test1_ids & sel_ids:
            problems.append("test1 intersects the selection")
        if test1_ids | sel_ids != cand_ids:
            problems.append("test1 and the selection do not cover the candidates")
    if test2_ids & (d1_ids | sel_ids):
        problems.append("test2 intersects D2")
    if test2_ids | d1_ids | sel_ids != pool_ids:
        problems.append("test2 and D2 do not cover the pool")
    if problems:
        raise ProtocolInvariantError("Realization index sets are inconsistent", details={"problems": problems})


def _evaluate(q90_initial: float, after: TrainedModel, test: Dataset) -> TestMetrics:
    q90_after = q_quantile(positioning_errors(after, test))
    return TestMetrics(
        q90_initial_m=q90_initial,
        q90_after_m=q90_after,
        gain=gain(q90_initial, q90_after),
        n_test=len(test),
    )


def run_strategy(
    context: RealizationContext,
    strategy: Strategy,
    selection_dir: Optional[Path] = None,
) -> RealizationResult:
    """Steps 2 to 4 of the protocol for one strategy on a prepared realization."""
    config = context.config
    percent = strategy.fixed_percent if strategy.fixed_percent is not None else config.x_percent
    k = selection_size(percent, len(context.candidates))
    seeds = strategy_seeds(config, context.realization, context.bs_count, strategy)
    result = RealizationResult(
        realization=context.realization,
        seed=context.seed,
        bs_count=context.bs_count,
        strategy=strategy,
        k_selected=k,
        d1_hash=context.d1.content_hash(),
        candidates_hash=context.candidates.content_hash(),
        nn1a_hash=context.nn1a.model.content_hash() if context.nn1a is not None else "",
    )
    start = time.perf_counter()

    if context.nn1a is None:
        return _diverged(result, context.nn1a_error)

    try:
        selection = _select(context, strategy, k, seeds["select"])
        selected = context.candidates.take(selection.selected_indices)
        d2 = context.d1.concat(selected)
        nn2a = fine_tune_model(context.nn1a, d2, config.train, seeds["fine_tune"])
    except TrainingDivergenceError as exc:
        return _diverged(result, exc)

    unselected = context.candidates.take(selection.unselected_indices())
    test1_is_candidates = len(unselected) == 0
    test1 = context.candidates if test1_is_candidates else unselected
    test2 = context.rest.concat(unselected)
    check_partition(context.pool, context.d1, context.candidates, selected, test1, test2, test1_is_candidates)
    if len(d2) != len(context.d1) + k:
        raise ProtocolInvariantError("D2 has the wrong size", details={"d2": len(d2), "d1": len(context.d1), "k": k})

    if selection_dir is not None:
        rows = "\n".join(",".join(row) for row in selection.to_rows())
        atomic_write_text(
            selection_dir / selection_file_name(context.bs_count, context.realization, strategy),
            "candidate_index,score,selected\n" + rows + "\n",
        )

    metrics = {TestSet.TEST1: _evaluate(context.initial_q90[TestSet.TEST1], nn2a, test1)}
    # empty when pool_size == 2n and every candidate was selected
    if len(test2):
        metrics[TestSet.TEST2] = _evaluate(context.initial_q90[TestSet.TEST2], nn2a, test2)

    result = result.model_copy(update={
        "metrics": metrics,
        "selected_indices": sorted(selected.pool_indices.tolist()),
        "test1_is_candidates": test1_is_candidates,
    })
    experiment_logger.log_realization_completed(
        context.realization,
        context.bs_count,
        strategy.value,
        round((time.perf_counter() - start) * 1000, 2),
        {test_set.value: round(m.gain, 6) for test_set, m in metrics.items()},
    )
    return result


def _diverged(result: RealizationResult, exc: Optional[TrainingDivergenceError]) -> RealizationResult:
    details = exc.details if exc is not None else {}
    experiment_logger.log_realization_diverged(
        result.realization, result.bs_count, result.strategy.value, "TRAINING_DIVERGED", details
    )
    return result.model_copy(update={"status": RealizationStatus.DIVERGED})


def run_realization(config: ExperimentConfig, bs_count: int, strategy: Strategy, realization: int) -> RealizationResult:
    """One strategy of one realization, from pool generation to metrics."""
    return run_strategy(prepare_realization(config, bs_count, realization), strategy)


def checkpoint_file_name(role: str, bs_count: int, realization: int) -> str:
    return f"{role}_bs{bs_count:02d}_r{realization:03d}.ckpt"


def selection_file_name(bs_count: int, realization: int, strategy: Strategy) -> str:
    return f"bs{bs_count:02d}_r{realization:03d}_{strategy.value}.csv"


def _run_job(config: ExperimentConfig, realization: int, output_dir: Optional[str]) -> Tuple[List[RealizationResult], List[str]]:
    """All BS counts and strategies of one realization; returns results and files written."""
    results: List[RealizationResult] = []
    written: List[str] = []
    root = Path(output_dir) if output_dir else None
    selection_dir = root / "selections" if root is not None and config.save_selections else None

    for bs_count in config.bs_counts:
        context = prepare_realization(config, bs_count, realization)
        for strategy in config.strategies:
            results.append(run_strategy(context, strategy, selection_dir))
            if selection_dir is not None and results[-1].is_valid:
                written.append(f"selections/{selection_file_name(bs_count, realization, strategy)}")

        if root is not None and config.save_checkpoints:
            models = [("nn1a", context.nn1a)] + ([("nn1b", context.nn1b())] if context.has_nn1b else [])
            for role, trained in models:
                if trained is None:
                    continue
                name = f"checkpoints/{checkpoint_file_name(role, bs_count, realization)}"
                save_checkpoint(trained.model, trained.normalizer, root / name, trained.role)
                written.append(name)
    return results, written


class ExperimentRunner:
    """Runs every (realization, BS count, strategy) of a configuration.

    Realizations are independent jobs spread over ``config.workers``
    processes; results come back sorted by (BS count, strategy, realization).
    """

    def __init__(self, config: ExperimentConfig, output_dir: Optional[str] = None):
        self.config = config
        self.output_dir = str(output_dir) if output_dir is not None else None
        self.written_files: List[str] = []

    def __repr__(self):
        return f"<ExperimentRunner(realizations={self.config.n_realizations}, workers={self.config.workers})>"

    def seeds(self) -> Dict[str, int]:
        """Every derived seed of the sweep, keyed for the manifest."""
        seeds: Dict[str, int] = {}
        for r in range(self.config.n_realizations):
            seeds[f"realization_{r}"] = realization_seed(self.config, r)
            for bs_count in self.config.bs_counts:
                stages = stage_seeds(self.config, r, bs_count)
                seeds[f"r{r:03d}_pool"] = stages["pool"]
                seeds[f"r{r:03d}_partition"] = stages["partition"]
                prefix = f"r{r:03d}_bs{bs_count:02d}"
                seeds[f"{prefix}_nn1a"] = stages["nn1a"]
                seeds[f"{prefix}_nn1b"] = stages["nn1b"]
                for strategy in self.config.strategies:
                    for stage, seed in strategy_seeds(self.config, r, bs_count, strategy).items():
                        seeds[f"{prefix}_{strategy.value}_{stage}"] = seed
        return seeds

    def run(self) -> List[RealizationResult]:
        realizations = list(range(self.config.n_realizations))
        workers = min(self.config.workers, len(realizations))
        if workers <= 1:
            outputs = [_run_job(self.config, r, self.output_dir) for r in realizations]
        else:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                outputs = list(executor.map(
                    _run_job,
                    [self.config] * len(realizations),
                    realizations,
                    [self.output_dir] * len(realizations),
                ))

        results: List[RealizationResult] = []
        self.written_files = []
        for job_results, job_files in outputs:
            results.extend(job_results)
            self.written_files.extend(job_files)
        return sorted(results, key=lambda r: r.sort_key)


@log_function_call(logger)
def run_experiment(config: ExperimentConfig) -> SummaryTable:
    """Full sweep over BS counts, strategies and realizations, aggregated."""
    return summarize(ExperimentRunner(config).run())


# Aggregation

def summarize(results: Sequence[RealizationResult]) -> SummaryTable:
    """Per (BS count, strategy, test set) means over the valid realizations."""
    if not results:
        raise EmptyInputError("results")
    groups: Dict[Tuple[int, Strategy], List[RealizationResult]] = {}
    for result in sorted(results, key=lambda r: r.sort_key):
        groups.setdefault((result.bs_count, result.strategy), []).append(result)

    rows: List[SummaryRow] = []
    for (bs_count, strategy), members in groups.items():
        for test_set in TestSet:
            metrics = [r.metrics[test_set] for r in members if r.is_valid and test_set in r.metrics]
            row = SummaryRow(bs_count=bs_count, strategy=strategy, test_set=test_set, n_valid=len(metrics), n_total=len(members))
            if metrics:
                row.mean_gain = math.fsum(m.gain for m in metrics) / len(metrics)
                row.mean_q90_initial_m = math.fsum(m.q90_initial_m for m in metrics) / len(metrics)
                row.mean_q90_after_m = math.fsum(m.q90_after_m for m in metrics) / len(metrics)
            rows.append(row)
    return SummaryTable(rows=rows)


D1_ONLY = "d1-only"


def d1_only_q90(summary: SummaryTable, bs_count: int, test_set: TestSet) -> Optional[float]:
    """Mean D1-only Q(0.9) at one BS count, from the strategy with the most valid realizations."""
    rows = [
        row for row in summary.rows
        if row.bs_count == bs_count and row.test_set == test_set and row.mean_q90_initial_m is not None
    ]
    if not rows:
        return None
    return max(rows, key=lambda row: (row.n_valid, -STRATEGY_ORDER[row.strategy])).mean_q90_initial_m


def table_one(summary: SummaryTable) -> Dict[str, Dict[TestSet, Optional[float]]]:
    """Mean percent gain per strategy and test set, averaged over BS counts, with D1 only pinned at 0."""
    table: Dict[str, Dict[TestSet, Optional[float]]] = {D1_ONLY: {test_set: 0.0 for test_set in TestSet}}
    for strategy in sorted(summary.strategies, key=STRATEGY_ORDER.get):
        table[strategy.value] = {}
        for test_set in TestSet:
            gains = [
                row.mean_gain for row in summary.rows
                if row.strategy == strategy and row.test_set == test_set and row.mean_gain is not None
            ]
            table[strategy.value][test_set] = 100.0 * math.fsum(gains) / len(gains) if gains else None
    return table


def achievable_gain_fractions(summary: SummaryTable) -> Dict[Tuple[int, TestSet], Dict[Strategy, float]]:
    """Share of the Rand100 mean gain each strategy reaches; empty without a positive Rand100 gain."""
    fractions: Dict[Tuple[int, TestSet], Dict[Strategy, float]] = {}
    for bs_count in summary.bs_counts:
        for test_set in TestSet:
            reference = summary.get(bs_count, Strategy.RAND100, test_set)
            if reference is None or reference.mean_gain is None or reference.mean_gain <= 0.0:
                continue
            fractions[(bs_count, test_set)] = {
                row.strategy: row.mean_gain / reference.mean_gain
                for row in summary.rows
                if row.bs_count == bs_count and row.test_set == test_set and row.mean_gain is not None
            }
    return fractions


@dataclass(frozen=True)
class SavingsEstimate:
    """Random-selection budget matching a ranked strategy's Q(0.9)"""

    bs_count: int
    test_set: TestSet
    strategy: Strategy
    target_q90_m: float
    equivalent_random_percent: Optional[float]
    data_fraction: Optional[float]


def _random_curve(summary: SummaryTable, bs_count: int, test_set: TestSet, x_percent: float) -> List[Tuple[float, float]]:
    """(percent selected, mean Q(0.9)) points of the random baselines, D1 only at 0 %."""
    points: Dict[float, float] = {}
    initial = d1_only_q90(summary, bs_count, test_set)
    if initial is not None:
        points[0.0] = initial
    for strategy, percent in ((Strategy.RANDOM, x_percent), (Strategy.RAND60, 60.0), (Strategy.RAND100, 100.0)):
        row = summary.get(bs_count, strategy, test_set)
        if row is not None and row.mean_q90_after_m is not None:
            points[float(percent)] = row.mean_q90_after_m
    return sorted(points.items())


def _crossing(curve: List[Tuple[float, float]], target: float) -> Optional[float]:
    """First percent along the piecewise-linear curve where Q(0.9) reaches ``target``."""
    for (p0, q0), (p1, q1) in zip(curve, curve[1:]):
        low, high = min(q0, q1), max(q0, q1)
        if low <= target <= high:
            if q1 == q0:
                return p0
            return p0 + (target - q0) * (p1 - p0) / (q1 - q0)
    return None


def data_savings(summary: SummaryTable, x_percent: float) -> List[SavingsEstimate]:
    """Random data share that would match Genie and Practical at ``x_percent``."""
    estimates: List[SavingsEstimate] = []
    for bs_count in summary.bs_counts:
        for test_set in TestSet:
            curve = _random_curve(summary, bs_count, test_set, x_percent)
            if len(curve) < 2:
                continue
            for strategy in (Strategy.GENIE, Strategy.PRACTICAL):
                row = summary.get(bs_count, strategy, test_set)
                if row is None or row.mean_q90_after_m is None:
                    continue
                equivalent = _crossing(curve, row.mean_q90_after_m)
                fraction = x_percent / equivalent if equivalent else None
                estimates.append(SavingsEstimate(
                    bs_count=bs_count,
                    test_set=test_set,
                    strategy=strategy,
                    target_q90_m=row.mean_q90_after_m,
                    equivalent_random_percent=equivalent,
                    data_fraction=fraction,
                ))
    return estimates
