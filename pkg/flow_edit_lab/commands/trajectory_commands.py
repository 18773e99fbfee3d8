"""
Utility verbs that do not start a run: trajectory comparison and the config schema.
"""

import argparse
import json
from pathlib import Path

from flow_edit_lab.errors import InvalidInputError
from flow_edit_lab.schemas.run import RunConfig
from flow_edit_lab.services.experiments import compare_trajectories


def compare_command(args: argparse.Namespace) -> int:
    """Print the max per-step deviation between two trajectory files."""
    for path in (args.a, args.b):
        if not path.is_file():
            msg = "trajectory file not found"
            raise InvalidInputError(msg, path=str(path))
    deviation = compare_trajectories(args.a, args.b)
    print(json.dumps({"a": str(args.a), "b": str(args.b), "max_deviation": deviation}))
    return 0


def schema_command(args: argparse.Namespace) -> int:
    print(json.dumps(RunConfig.model_json_schema(), indent=2, sort_keys=True))
    return 0


def register(subparsers: "argparse._SubParsersAction[argparse.ArgumentParser]") -> None:
    compare = subparsers.add_parser(
        "compare", help="Max per-step state deviation between two trajectory files"
    )
    compare.add_argument("a", type=Path, help="First trajectory (.jsonl)")
    compare.add_argument("b", type=Path, help="Second trajectory (.jsonl)")
    compare.set_defaults(handler=compare_command)

    schema = subparsers.add_parser("schema", help="Print the run-config JSON schema")
    schema.set_defaults(handler=schema_command)
