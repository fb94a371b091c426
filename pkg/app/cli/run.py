import argparse
from datetime import datetime, timezone

from app.cli.options import common_options, experiment_options, load_experiment_config, output_dir
from app.services.artifacts import PLOT_FILE, TABLE_FILE, write_results
from app.services.plotting import emit_plot
from app.services.protocol import ExperimentRunner, summarize
from app.services.storage import ArtifactStore


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "run",
        parents=[common_options(), experiment_options()],
        help="Run the full experiment and write results, summary, plot and manifest",
    )
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    started_at = datetime.now(timezone.utc)
    config = load_experiment_config(args)
    out = output_dir(args)

    runner = ExperimentRunner(config, output_dir=str(out))
    results = runner.run()
    summary = summarize(results)

    store = ArtifactStore(out)
    for relative in runner.written_files:
        store.adopt(relative)
    emit_plot(summary, store.path_for(PLOT_FILE))
    store.adopt(PLOT_FILE)
    write_results(
        results,
        summary,
        out,
        config=config,
        command="run",
        started_at=started_at,
        seeds={"base_seed": config.base_seed, **runner.seeds()},
        store=store,
    )
    print(store.path_for(TABLE_FILE).read_text(encoding="utf-8"), end="")
    return 0
