"""
Experiment verbs: each loads a run config, pins its experiment kind and hands it to the
experiment service.
"""

import argparse
import json
from pathlib import Path

from pydantic import ValidationError

from flow_edit_lab.config import logger
from flow_edit_lab.errors import InvalidConfigError
from flow_edit_lab.schemas.run import ExperimentKind, RunConfig
from flow_edit_lab.services.experiments import run
from flow_edit_lab.utils.codec import load_json

# CLI verb -> experiment kind
VERBS: dict[str, ExperimentKind] = {
    "train": ExperimentKind.TRAIN,
    "invert": ExperimentKind.INVERT,
    "reconstruct": ExperimentKind.RECONSTRUCT,
    "edit": ExperimentKind.EDIT,
    "multiturn": ExperimentKind.MULTI_TURN,
    "bench": ExperimentKind.BENCH_SOLVERS,
    "verify-bounds": ExperimentKind.VERIFY_BOUNDS,
    "sweep": ExperimentKind.SWEEP_ALPHA_SCHEDULERS,
    "sweep-guidance": ExperimentKind.SWEEP_GUIDANCE,
    "grad-check": ExperimentKind.GRAD_CHECK,
    "perfect-latent": ExperimentKind.PERFECT_LATENT,
}

HELP: dict[str, str] = {
    "train": "Train a conditional flow-matching model on a Gaussian mixture",
    "invert": "Invert a source state to noise with the configured solver",
    "reconstruct": "Invert then reconstruct and report the round-trip error",
    "edit": "Edit a source state toward a target condition",
    "multiturn": "Apply a sequence of edits, checking each turn against its bound",
    "bench": "Benchmark inversion solvers over methods, iterations and step counts",
    "verify-bounds": "Run the bound-verification suites on the analytic fields",
    "sweep": "Compare fixed alphas and alpha schedulers on one edit",
    "sweep-guidance": "Sweep decay rate and guidance scale on one edit",
    "grad-check": "Check model gradients against central differences",
    "perfect-latent": "Edit from the exact latent of an analytic field and from solver latents",
}


def load_run_config(path: Path, experiment: ExperimentKind | None = None) -> RunConfig:
    """
    Read and validate a run-config document.

    Args:
        path (Path): JSON file.
        experiment (ExperimentKind, optional): Kind implied by the CLI verb; fills a missing
            experiment and must agree with a present one.

    Returns:
        RunConfig: Validated config with experiment set when one was implied.

    Raises:
        InvalidConfigError: If the file is missing, not JSON, invalid, or names another
            experiment than the verb.
    """
    try:
        document = load_json(path)
    except FileNotFoundError as exc:
        msg = "run config not found"
        raise InvalidConfigError(msg, path=str(path)) from exc
    except json.JSONDecodeError as exc:
        msg = "run config is not valid JSON"
        raise InvalidConfigError(msg, path=str(path), line=exc.lineno) from exc

    try:
        config = RunConfig.model_validate(document)
    except ValidationError as exc:
        msg = "run config failed validation"
        errors = [
            {"loc": ".".join(str(part) for part in err["loc"]), "msg": err["msg"]}
            for err in exc.errors()
        ]
        logger.warning(msg, extra={"path": str(path), "errors": errors})
        raise InvalidConfigError(msg, path=str(path), errors=errors) from exc

    if experiment is None:
        return config
    if config.experiment is not None and config.experiment is not experiment:
        msg = "run config names a different experiment than the command"
        raise InvalidConfigError(
            msg, path=str(path), config=config.experiment.value, command=experiment.value
        )
    return config.model_copy(update={"experiment": experiment})


def run_command(args: argparse.Namespace) -> int:
    """Run one experiment verb; prints the manifest summary to stdout."""
    config = load_run_config(args.config, VERBS[args.verb])
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    manifest = run(config, output_dir=args.output_dir)
    summary = {
        "run_id": manifest.run_id,
        "experiment": manifest.experiment,
        "status": manifest.status.value,
        "nfe": manifest.nfe,
        "artifacts": manifest.artifacts,
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def register(subparsers: "argparse._SubParsersAction[argparse.ArgumentParser]") -> None:
    """Add one sub-command per experiment verb."""
    for verb in VERBS:
        parser = subparsers.add_parser(verb, help=HELP[verb], description=HELP[verb])
        parser.add_argument("config", type=Path, help="Run-config JSON file")
        parser.add_argument(
            "-o", "--output-dir", type=Path, default=None, help="Artifact directory"
        )
        parser.add_argument(
            "--seed", type=int, default=None, help="Override the config seed"
        )
        parser.set_defaults(handler=run_command)
