"""Static SVG chart of mean Q(0.9) against the number of BS."""

import io
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from app.core.exceptions import EmptyInputError  # noqa: E402
from app.schemas.experiment import STRATEGY_ORDER, Strategy, SummaryTable, TestSet  # noqa: E402
from app.services.protocol import d1_only_q90  # noqa: E402
from app.services.storage import atomic_write_bytes  # noqa: E402


Y_MARGIN = 0.12

STRATEGY_COLORS: Dict[Strategy, str] = {
    Strategy.RANDOM: "0.5",
    Strategy.GENIE: "tab:red",
    Strategy.PRACTICAL: "tab:blue",
    Strategy.RAND60: "tab:green",
    Strategy.RAND100: "black",
}
INITIAL_COLOR = "tab:orange"
LINESTYLES = {TestSet.TEST1: "-", TestSet.TEST2: "--"}

SVG_STYLE = {
    "svg.fonttype": "none",
    "svg.hashsalt": "fplab",
    "path.simplify": False,
}


def y_axis_limits(values: Sequence[float]) -> Tuple[float, float]:
    """Data range padded by Y_MARGIN of its span on both sides."""
    if not values:
        return 0.0, 1.0
    low, high = min(values), max(values)
    span = high - low
    margin = Y_MARGIN * span if span > 0 else max(Y_MARGIN * abs(high), 1.0)
    return low - margin, high + margin


def _initial_curve(summary: SummaryTable, test_set: TestSet) -> Tuple[List[int], List[float]]:
    """D1-only Q(0.9), the reference every strategy's gain is measured against."""
    xs, ys = [], []
    for bs_count in summary.bs_counts:
        value = d1_only_q90(summary, bs_count, test_set)
        if value is not None:
            xs.append(bs_count)
            ys.append(value)
    return xs, ys


def build_figure(summary: SummaryTable, include_initial: bool = True) -> Figure:
    if not summary.rows:
        raise EmptyInputError("summary")

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    plotted: List[float] = []
    for test_set in TestSet:
        linestyle = LINESTYLES[test_set]
        if include_initial:
            xs, ys = _initial_curve(summary, test_set)
            if xs:
                ax.plot(xs, ys, color=INITIAL_COLOR, linestyle=linestyle, marker="s", label=f"D1 only ({test_set.value})")
                plotted += ys
        for strategy in sorted(summary.strategies, key=STRATEGY_ORDER.get):
            points = [
                (row.bs_count, row.mean_q90_after_m) for row in summary.rows
                if row.strategy == strategy and row.test_set == test_set and row.mean_q90_after_m is not None
            ]
            if not points:
                continue
            points.sort()
            ax.plot(
                [x for x, _ in points],
                [y for _, y in points],
                color=STRATEGY_COLORS[strategy],
                linestyle=linestyle,
                marker="o",
                label=f"{strategy.value} ({test_set.value})",
            )
            plotted += [y for _, y in points]

    ax.set_xticks(summary.bs_counts)
    ax.set_xlabel("Number of BS")
    ax.set_ylabel("Mean Q(0.9) positioning error [m]")
    ax.set_ylim(*y_axis_limits(plotted))
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize="small", ncol=2)
    fig.tight_layout()
    return fig


def render_svg(summary: SummaryTable, include_initial: bool = True) -> bytes:
    with matplotlib.rc_context(SVG_STYLE):
        fig = build_figure(summary, include_initial)
        try:
            buffer = io.BytesIO()
            fig.savefig(buffer, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buffer.getvalue()


def emit_plot(summary: SummaryTable, out_path: Union[str, Path], include_initial: bool = True) -> bytes:
    """Write the SVG atomically; returns its bytes."""
    data = render_svg(summary, include_initial)
    atomic_write_bytes(out_path, data)
    return data
