"""Command line package for rgi; one module per subcommand."""

from __future__ import annotations

import argparse
import logging
from typing import Optional

from rgi import __version__
from rgi.utils.log import setup_logging

from .evaluate import register as register_evaluate
from .generate import register as register_generate
from .inspect import register as register_inspect
from .train import register as register_train

logger = logging.getLogger(__name__)


def common_parser() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat YAML file of settings; explicit flags win")
    common.add_argument("--threads", type=int, help="worker count (default: $RGI_THREADS, else all cores)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings only, no progress bars")
    return common


def register_commands(subparsers, common: argparse.ArgumentParser) -> None:
    """Register all subcommands."""
    register_generate(subparsers, common)
    register_train(subparsers, common)
    register_evaluate(subparsers, common)
    register_inspect(subparsers, common)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rgi",
        description="Room geometry inference from simulated multichannel room impulse responses.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    register_commands(subparsers, common_parser())
    return parser


def main(argv: Optional[list] = None) -> int:
    """Parse, run one subcommand, print its JSON envelope and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        setup_logging(-1 if args.quiet else args.verbose)
        logger.debug("Running %s", args.command)
        response = args.handler(args)
    except SystemExit as e:
        # argparse usage errors and --help
        return e.code if isinstance(e.code, int) else 1
    return response.emit()
