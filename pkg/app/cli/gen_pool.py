import argparse
from datetime import datetime, timezone

from app.cli.options import common_options, experiment_options, load_experiment_config, output_dir
from app.core.exceptions import ConfigValidationError
from app.schemas.experiment import RunManifest
from app.services.artifacts import MANIFEST_FILE, write_manifest
from app.services.dataset_io import dataset_to_text
from app.services.protocol import bs_subset_for, realization_pool, stage_seeds
from app.services.scene_channel import subsample_bs
from app.services.storage import ArtifactStore


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "gen-pool",
        parents=[common_options(), experiment_options()],
        help="Generate the baseline pool of one realization",
    )
    parser.add_argument("--realization", type=int, default=0, help="Realization index whose pool seed is used")
    parser.add_argument("--bs-count", type=int, help="Keep only this many BS columns (default: all)")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    started_at = datetime.now(timezone.utc)
    config = load_experiment_config(args)
    n_bs_total = config.scene.n_bs
    bs_count = n_bs_total if args.bs_count is None else args.bs_count
    if not 1 <= bs_count <= n_bs_total:
        raise ConfigValidationError(
            f"--bs-count must lie in [1, {n_bs_total}]",
            field="bs_count",
            constraint="range",
            value=bs_count
        )
    seeds = stage_seeds(config, args.realization, bs_count)

    scene, pool = realization_pool(config, args.realization)
    if bs_count != n_bs_total:
        pool = subsample_bs(pool, bs_subset_for(config, n_bs_total, bs_count))

    store = ArtifactStore(output_dir(args))
    name = f"pool_r{args.realization:03d}_bs{bs_count:02d}.csv"
    store.write_text(name, dataset_to_text(pool, scene.config))
    write_manifest(
        RunManifest(
            command="gen-pool",
            config=config,
            started_at=started_at,
            finished_at=datetime.now(timezone.utc),
            seeds={"realization": seeds["realization"], "pool": seeds["pool"]},
            files=list(store.records),
        ),
        store,
    )
    print(f"{len(pool)} positions x {pool.n_features} BS -> {store.path_for(name)} ({MANIFEST_FILE} updated)")
    return 0
