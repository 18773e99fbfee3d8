"""
flow-edit-lab command-line entry point.

Verbs:
    train, invert, reconstruct, edit, multiturn, bench, verify-bounds, sweep, sweep-guidance,
    grad-check   run one experiment from a run-config JSON file
    compare      max per-step deviation between two trajectory files
    schema       print the run-config JSON schema

Exit codes: 0 success, 2 invalid input or config, 3 numerical failure, 1 anything else
raised by the package.
"""

import argparse
import json
import sys
from collections.abc import Sequence

from flow_edit_lab import __version__
from flow_edit_lab.commands import experiment_commands, trajectory_commands
from flow_edit_lab.config import logger
from flow_edit_lab.errors import FlowLabError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flow-edit-lab",
        description="Rectified-flow inversion and editing experiments",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="verb", required=True, metavar="VERB")
    experiment_commands.register(subparsers)
    trajectory_commands.register(subparsers)
    return parser


def cli(argv: Sequence[str] | None = None) -> int:
    """
    Parse arguments and dispatch to the verb handler.

    Domain errors are reported as a JSON error record on stderr and mapped to their exit
    code; runs also leave error.json in their output directory.

    Returns:
        int: Process exit code.
    """
    args = build_parser().parse_args(argv)
    try:
        return int(args.handler(args))
    except FlowLabError as exc:
        logger.error(
            "Command failed",
            extra={"verb": args.verb, "error": exc.message, "exit_code": exc.exit_code},
        )
        print(json.dumps(exc.to_record(), sort_keys=True, default=str), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(cli())
