import argparse
from pathlib import Path
from typing import List, Optional

from app.core.config import settings
from app.schemas.experiment import ExperimentConfig
from app.services.config_parser import override_config, parse_config, validate_config


def common_options() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="Experiment configuration file (key=value)")
    parent.add_argument("--out", default=settings.DEFAULT_OUTPUT_DIR, help="Output directory")
    parent.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Override LOG_LEVEL")
    parent.add_argument("--log-format", choices=["json", "plain"], help="Override LOG_FORMAT")
    return parent


def experiment_options() -> argparse.ArgumentParser:
    """Flags that override configuration values."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, help="Override experiment.base_seed")
    parent.add_argument("--realizations", type=int, help="Override experiment.n_realizations")
    parent.add_argument("--workers", type=int, help="Override experiment.workers")
    parent.add_argument("--strategies", help="Override experiment.strategies (comma separated)")
    return parent


def _strategy_list(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    return [item.strip() for item in value.split(",") if item.strip()]


def load_experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Configuration file (or defaults) with the command-line overrides applied."""
    config = parse_config(args.config) if args.config else validate_config({})
    return override_config(
        config,
        base_seed=getattr(args, "seed", None),
        n_realizations=getattr(args, "realizations", None),
        workers=getattr(args, "workers", None),
        strategies=_strategy_list(getattr(args, "strategies", None)),
    )


def output_dir(args: argparse.Namespace) -> Path:
    return Path(args.out)
