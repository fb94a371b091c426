import argparse
import logging
import sys
from typing import List, Optional

from app.cli import gen_pool, report, run, verify
from app.core.config import settings
from app.core.error_handlers import handle_exception
from app.core.exceptions import ExitCode
from app.core.logging import setup_logging


logger = logging.getLogger("fplab.cli")


class LabArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with the usage code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(int(ExitCode.USAGE), f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = LabArgumentParser(
        prog="fplab",
        description=f"{settings.PROJECT_NAME}: data selection for fingerprint positioning",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=LabArgumentParser)

    # Pool generation
    gen_pool.register(subparsers)

    # Full experiment
    run.register(subparsers)

    # Summary and plot from results.csv
    report.register(subparsers)

    # Manifest checksums
    verify.register(subparsers)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    setup_logging(
        level=args.log_level,
        json_format=None if args.log_format is None else args.log_format == "json",
    )
    logger.info(f"Starting {args.command}", extra={"stage": args.command})
    try:
        return args.handler(args)
    except Exception as exc:
        return handle_exception(exc, command=args.command)
