import argparse

from app.cli.options import common_options, output_dir
from app.core.exceptions import ManifestVerificationError
from app.services.artifacts import MANIFEST_FILE, read_manifest, verify_manifest


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "verify",
        parents=[common_options()],
        help="Check every file listed in a manifest against its checksum",
    )
    parser.add_argument("--manifest", help=f"Manifest file (default: <out>/{MANIFEST_FILE})")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    path = args.manifest or output_dir(args) / MANIFEST_FILE
    mismatched = verify_manifest(path)
    if mismatched:
        raise ManifestVerificationError(mismatched, path=str(path))
    print(f"ok: {len(read_manifest(path).files)} file(s) match {path}")
    return 0
