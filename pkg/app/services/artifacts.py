"""
Run artifacts: machine CSVs, the human summary and the manifest.

Machine files carry 17 significant digits and a fixed row order so a
re-run with the same configuration reproduces them byte for byte.
"""

import csv
import io
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import ValidationError as PydanticValidationError

from app.core.exceptions import ArtifactIOError, EmptyInputError
from app.core.logging import experiment_logger
from app.schemas.experiment import (
    STRATEGY_ORDER,
    ExperimentConfig,
    RealizationResult,
    RealizationStatus,
    RunManifest,
    Strategy,
    SummaryTable,
    TestMetrics,
    TestSet,
)
from app.services.config_parser import serialize_config
from app.services.protocol import achievable_gain_fractions, d1_only_q90, data_savings, table_one
from app.services.storage import ArtifactStore, read_text


logger = logging.getLogger("fplab.artifacts")

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.csv"
TABLE_FILE = "table1.txt"
PLOT_FILE = "plot.svg"
CONFIG_FILE = "config.ini"
MANIFEST_FILE = "manifest.json"

RESULTS_COLUMNS = [
    "realization", "seed", "bs_count", "strategy", "test_set",
    "q90_initial_m", "q90_after_m", "gain", "k_selected", "status",
]
SUMMARY_COLUMNS = [
    "bs_count", "strategy", "test_set",
    "mean_gain_pct", "mean_q90_initial_m", "mean_q90_after_m", "n_valid",
]


def format_float(value: Optional[float]) -> str:
    return "" if value is None else format(value, ".17g")


def format_human(value: Optional[float]) -> str:
    return "n/a" if value is None else format(value, ".3g")


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def results_to_csv(results: Sequence[RealizationResult]) -> str:
    """One row per (result, test set), ordered by BS count, strategy, test set, realization."""
    rows = []
    for result in results:
        for test_set in TestSet:
            metrics = result.metrics.get(test_set)
            rows.append((
                (result.bs_count, STRATEGY_ORDER[result.strategy], test_set.value, result.realization),
                [
                    str(result.realization),
                    str(result.seed),
                    str(result.bs_count),
                    result.strategy.value,
                    test_set.value,
                    format_float(metrics.q90_initial_m if metrics else None),
                    format_float(metrics.q90_after_m if metrics else None),
                    format_float(metrics.gain if metrics else None),
                    str(result.k_selected),
                    result.status.value,
                ],
            ))
    rows.sort(key=lambda item: item[0])
    return _csv_text(RESULTS_COLUMNS, (row for _, row in rows))


def summary_to_csv(summary: SummaryTable) -> str:
    ordered = sorted(
        summary.rows,
        key=lambda row: (row.bs_count, STRATEGY_ORDER[row.strategy], row.test_set.value),
    )
    return _csv_text(SUMMARY_COLUMNS, (
        [
            str(row.bs_count),
            row.strategy.value,
            row.test_set.value,
            format_float(None if row.mean_gain is None else 100.0 * row.mean_gain),
            format_float(row.mean_q90_initial_m),
            format_float(row.mean_q90_after_m),
            str(row.n_valid),
        ]
        for row in ordered
    ))


def _optional_float(value: str) -> Optional[float]:
    return float(value) if value != "" else None


def read_results(path: Union[str, Path]) -> List[RealizationResult]:
    """Rebuild realization results from a results.csv."""
    path = str(path)
    reader = csv.reader(io.StringIO(read_text(path)))
    header = next(reader, None)
    if header != RESULTS_COLUMNS:
        raise ArtifactIOError(f"{path} does not have the results columns", path=path, operation="read")

    grouped: Dict[Tuple[int, int, str], Dict] = {}
    try:
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RESULTS_COLUMNS):
                raise ValueError(f"line {line_number} has {len(row)} fields")
            record = dict(zip(RESULTS_COLUMNS, row))
            key = (int(record["bs_count"]), int(record["realization"]), record["strategy"])
            entry = grouped.setdefault(key, {
                "realization": int(record["realization"]),
                "seed": int(record["seed"]),
                "bs_count": int(record["bs_count"]),
                "strategy": Strategy(record["strategy"]),
                "k_selected": int(record["k_selected"]),
                "status": RealizationStatus(record["status"]),
                "metrics": {},
            })
            gain = _optional_float(record["gain"])
            if gain is not None:
                entry["metrics"][TestSet(record["test_set"])] = TestMetrics(
                    q90_initial_m=float(record["q90_initial_m"]),
                    q90_after_m=float(record["q90_after_m"]),
                    gain=gain,
                )
        results = [RealizationResult(**entry) for entry in grouped.values()]
    except (ValueError, PydanticValidationError) as exc:
        raise ArtifactIOError(f"Invalid row in {path}: {exc}", path=path, operation="read")
    if not results:
        raise EmptyInputError(path)
    return sorted(results, key=lambda r: r.sort_key)


def _percent(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.1f}"


def summary_text(summary: SummaryTable, x_percent: float) -> str:
    """Human summary: percent gains with one decimal, meters with three significant digits."""
    lines = ["Average performance gain G in percent (mean over BS counts)", ""]
    lines.append(f"{'strategy':<12}" + "".join(f"{t.value:>10}" for t in TestSet))
    for label, gains in table_one(summary).items():
        lines.append(f"{label:<12}" + "".join(f"{_percent(gains[t]):>10}" for t in TestSet))

    lines += ["", "D1-only Q(0.9) reference in meters"]
    for bs_count in summary.bs_counts:
        lines.append(f"{bs_count:>3} BS  " + "  ".join(
            f"{t.value} {format_human(d1_only_q90(summary, bs_count, t)):>8}" for t in TestSet
        ))

    lines += ["", "Mean Q(0.9) in meters per BS count (initial -> after, valid/total)"]
    for row in sorted(summary.rows, key=lambda r: (r.bs_count, STRATEGY_ORDER[r.strategy], r.test_set.value)):
        lines.append(
            f"{row.bs_count:>3} BS  {row.strategy.value:<10} {row.test_set.value:<6} "
            f"{format_human(row.mean_q90_initial_m):>8} -> {format_human(row.mean_q90_after_m):>8}  "
            f"G={_percent(None if row.mean_gain is None else 100.0 * row.mean_gain):>6}%  "
            f"{row.n_valid}/{row.n_total}"
        )

    fractions = achievable_gain_fractions(summary)
    if fractions:
        lines += ["", "Share of the achievable gain (rand100 = 100%)"]
        for (bs_count, test_set), shares in sorted(fractions.items(), key=lambda item: (item[0][0], item[0][1].value)):
            parts = ", ".join(
                f"{strategy.value} {_percent(100.0 * share)}%"
                for strategy, share in sorted(shares.items(), key=lambda item: STRATEGY_ORDER[item[0]])
            )
            lines.append(f"{bs_count:>3} BS  {test_set.value:<6} {parts}")

    estimates = data_savings(summary, x_percent)
    if estimates:
        lines += ["", f"Random-selection budget matching each ranked strategy at {x_percent:g}%"]
        for estimate in estimates:
            if estimate.equivalent_random_percent is None:
                matched = "outside the random curve"
            else:
                matched = (
                    f"random {_percent(estimate.equivalent_random_percent)}% "
                    f"(data fraction {format_human(estimate.data_fraction)})"
                )
            lines.append(
                f"{estimate.bs_count:>3} BS  {estimate.test_set.value:<6} {estimate.strategy.value:<10} "
                f"Q(0.9)={format_human(estimate.target_q90_m)} m ~ {matched}"
            )
    return "\n".join(lines) + "\n"


def write_results(
    results: Sequence[RealizationResult],
    summary: SummaryTable,
    out_dir: Union[str, Path],
    config: Optional[ExperimentConfig] = None,
    command: str = "run",
    started_at: Optional[datetime] = None,
    seeds: Optional[Dict[str, int]] = None,
    store: Optional[ArtifactStore] = None,
) -> RunManifest:
    """Emit results.csv, summary.csv, table1.txt (and config.ini) plus the manifest.

    Files already recorded in ``store`` (plot, checkpoints) are listed too.
    """
    store = store or ArtifactStore(out_dir)
    store.write_text(RESULTS_FILE, results_to_csv(results))
    store.write_text(SUMMARY_FILE, summary_to_csv(summary))
    x_percent = config.x_percent if config is not None else 10.0
    store.write_text(TABLE_FILE, summary_text(summary, x_percent))
    if config is not None:
        store.write_text(CONFIG_FILE, serialize_config(config))

    manifest = RunManifest(
        command=command,
        config=config,
        started_at=started_at or datetime.now(timezone.utc),
        finished_at=datetime.now(timezone.utc),
        seeds=seeds or {},
        files=sorted((r for r in store.records if r.path != MANIFEST_FILE), key=lambda record: record.path),
    )
    write_manifest(manifest, store)
    return manifest


def write_manifest(manifest: RunManifest, store: ArtifactStore) -> None:
    # The manifest lists the other files, never itself
    store.write_text(MANIFEST_FILE, manifest.model_dump_json(indent=2) + "\n")


def read_manifest(path: Union[str, Path]) -> RunManifest:
    try:
        return RunManifest.model_validate_json(read_text(path))
    except PydanticValidationError as exc:
        raise ArtifactIOError(f"Invalid manifest {path}: {exc.error_count()} error(s)", path=str(path), operation="read")


def verify_manifest(path: Union[str, Path]) -> List[str]:
    """Paths whose current checksum differs from the manifest (missing files included)."""
    path = Path(path)
    manifest = read_manifest(path)
    store = ArtifactStore(path.parent)
    mismatched: List[str] = []
    for record in manifest.files:
        actual = store.check(record)
        if actual != record.sha256:
            experiment_logger.log_manifest_mismatch(record.path, record.sha256, actual)
            mismatched.append(record.path)
    logger.info(
        f"Verified {len(manifest.files)} artifact(s), {len(mismatched)} mismatch(es)",
        extra={"path": str(path)}
    )
    return mismatched
