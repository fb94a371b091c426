import argparse
from datetime import datetime, timezone

from app.cli.options import common_options, output_dir
from app.services.artifacts import CONFIG_FILE, PLOT_FILE, RESULTS_FILE, SUMMARY_FILE, TABLE_FILE, read_results, write_results
from app.services.config_parser import parse_config, validate_config
from app.services.plotting import emit_plot
from app.services.protocol import summarize
from app.services.storage import ArtifactStore


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "report",
        parents=[common_options()],
        help="Recompute summary, table and plot from an existing results.csv",
    )
    parser.add_argument("--results", help=f"Results file (default: <out>/{RESULTS_FILE})")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    started_at = datetime.now(timezone.utc)
    out = output_dir(args)
    results = read_results(args.results or out / RESULTS_FILE)
    summary = summarize(results)

    if args.config:
        config = parse_config(args.config)
    elif (out / CONFIG_FILE).is_file():
        config = parse_config(out / CONFIG_FILE)
    else:
        config = validate_config({})

    store = ArtifactStore(out)
    emit_plot(summary, store.path_for(PLOT_FILE))
    store.adopt(PLOT_FILE)
    write_results(results, summary, out, config=config, command="report", started_at=started_at, store=store)
    print(store.path_for(TABLE_FILE).read_text(encoding="utf-8"), end="")
    print(f"{SUMMARY_FILE} and {PLOT_FILE} rewritten in {out}")
    return 0
