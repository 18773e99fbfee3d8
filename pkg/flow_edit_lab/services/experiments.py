"""
Experiment orchestration: one handler per experiment kind, the middleware pipeline, and
artifact persistence (manifest.json, result.json, CSV tables, trajectory files).

result.json holds only values derived from (config, seed); run id and timestamps go to the
manifest.
"""

import csv
import json
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from datetime import datetime, timezone

UTC = timezone.utc
from pathlib import Path
from typing import Any

import numpy as np

from flow_edit_lab import __version__
from flow_edit_lab.config import logger
from flow_edit_lab.core.latent import Condition, LatentState
from flow_edit_lab.core.trajectory import (
    Direction,
    Trajectory,
    max_state_deviation,
    read_trajectory,
    write_trajectory,
)
from flow_edit_lab.errors import FlowLabError, InvalidConfigError
from flow_edit_lab.fields.analytic import AnalyticField
from flow_edit_lab.fields.base import CountingField, VelocityField
from flow_edit_lab.fields.cfm import (
    CfmModel,
    CfmPair,
    cfm_grad_check,
    cfm_train,
    conditional_accuracy,
    init_model,
    load_checkpoint,
    sample_mixture,
    save_checkpoint,
)
from flow_edit_lab.fields.factory import make_field
from flow_edit_lab.middleware.metrics_middleware import MetricsMiddleware
from flow_edit_lab.middleware.run_id_middleware import RunIdMiddleware
from flow_edit_lab.schemas.fields import TrainedFieldSpec
from flow_edit_lab.schemas.manifest import ErrorRecord, RunManifest, RunStatus
from flow_edit_lab.schemas.run import (
    AlphaScheduler,
    EditConfig,
    ExperimentKind,
    RunConfig,
    SolverConfig,
    SolverMethod,
)
from flow_edit_lab.services.bounds import (
    MIN_LIPSCHITZ_PAIRS,
    decomposition_accumulate,
    estimate_lipschitz,
    inversion_error_bound,
    turn_bound_report,
)
from flow_edit_lab.services.editing import (
    EditReport,
    EditTurn,
    backward_edit,
    multi_turn_edit,
    single_turn_edits,
)
from flow_edit_lab.services.inversion import (
    expected_nfe,
    invert,
    invert_exact,
    reconstruct,
    reference_solve,
    round_trip,
)
from flow_edit_lab.services.masking import mask_from_spec
from flow_edit_lab.services.verification import run_suites
from flow_edit_lab.utils.codec import dump_json

CHECKPOINT_FILE = "model.json"
RESULT_FILE = "result.json"
MANIFEST_FILE = "manifest.json"
ERROR_FILE = "error.json"
GRAD_CHECK_TOL = 1e-4
BOUND_TOL = 1e-9
# Pairs per condition when a trained field's Lipschitz constant has to be estimated
EDIT_LIPSCHITZ_PAIRS = 2 * MIN_LIPSCHITZ_PAIRS


@dataclass
class RunContext:
    """Mutable state of one run, shared by the middleware and the handler."""

    config: RunConfig
    output_dir: Path
    run_id: str = ""
    artifacts: list[str] = field(default_factory=list)
    counter: CountingField | None = None

    @property
    def experiment(self) -> ExperimentKind:
        if self.config.experiment is None:
            msg = "run config names no experiment"
            raise InvalidConfigError(msg)
        return self.config.experiment

    @property
    def nfe(self) -> int:
        return 0 if self.counter is None else self.counter.count

    def velocity_field(self) -> CountingField:
        """The configured field, wrapped so every evaluation counts toward the run's NFE."""
        if self.counter is None:
            if self.config.field is None:
                msg = "this experiment needs a field"
                raise InvalidConfigError(msg, experiment=self.experiment.value)
            self.counter = CountingField(make_field(self.config.field))
        return self.counter

    def source_state(self) -> LatentState:
        if self.config.source is None:
            msg = "this experiment needs a source state"
            raise InvalidConfigError(msg, experiment=self.experiment.value)
        return self.config.source.to_state()

    def source_condition(self) -> Condition:
        return self.config.source_condition.to_condition()

    def target_condition(self) -> Condition:
        if self.config.target_condition is None:
            msg = "this experiment needs a target condition"
            raise InvalidConfigError(msg, experiment=self.experiment.value)
        return self.config.target_condition.to_condition()


@dataclass
class RunOutcome:
    """What a handler produced; persisted by write_artifacts."""

    result: dict[str, Any]
    tables: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    trajectories: dict[str, Trajectory] = field(default_factory=dict)
    model: CfmModel | None = None


def to_plain(value: Any) -> Any:
    """Recursively convert numpy scalars/arrays and tuples into JSON-native values."""
    if isinstance(value, dict):
        return {str(key): to_plain(item) for key, item in value.items()}
    if isinstance(value, list | tuple):
        return [to_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool | np.bool_):
        return "true" if value else "false"
    if isinstance(value, float | np.floating):
        return repr(float(value))
    if isinstance(value, dict | list | tuple):
        return json.dumps(to_plain(value), sort_keys=True, separators=(",", ":"))
    return str(value)


def write_table(rows: list[dict[str, Any]], path: Path) -> None:
    """CSV with the union of row keys as columns (first-seen order); booleans as true/false."""
    fieldnames = list(dict.fromkeys(key for row in rows for key in row))
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(row.get(key)) for key in fieldnames})


def write_artifacts(ctx: RunContext, outcome: RunOutcome) -> None:
    out = ctx.output_dir
    out.mkdir(parents=True, exist_ok=True)
    dump_json(to_plain(outcome.result), out / RESULT_FILE)
    ctx.artifacts.append(RESULT_FILE)
    for name, rows in outcome.tables.items():
        if rows:
            write_table(rows, out / f"{name}.csv")
            ctx.artifacts.append(f"{name}.csv")
    for name, traj in outcome.trajectories.items():
        write_trajectory(traj, out / f"{name}.jsonl")
        ctx.artifacts.append(f"{name}.jsonl")
    if outcome.model is not None:
        save_checkpoint(outcome.model, out / CHECKPOINT_FILE)
        ctx.artifacts.append(CHECKPOINT_FILE)


def _lipschitz_for(
    vfield: VelocityField, source: Trajectory, conditions: list[Condition], seed: int
) -> tuple[float, bool]:
    """Certified constant when the field has one, otherwise an estimate over the source's span."""
    if vfield.lipschitz_bound is not None:
        return vfield.lipschitz_bound, True
    radius = max(1.0, max(state.distance(source.start) for state in source.states))
    estimate = max(
        estimate_lipschitz(
            vfield, c, source.start, radius, n_pairs=EDIT_LIPSCHITZ_PAIRS, seed=seed
        )
        for c in conditions
    )
    return estimate, False


def _component_distances(vfield: VelocityField, state: LatentState) -> list[float] | None:
    if not isinstance(vfield, CfmModel):
        return None
    means = np.asarray(vfield.dataset.means, dtype=np.float64)
    return [float(d) for d in np.linalg.norm(means - state.flatten(), axis=1)]


def _edit_source(ctx: RunContext, vfield: VelocityField, edit: EditConfig) -> Trajectory:
    solver = SolverConfig.build(
        SolverMethod.AFP, edit.n_steps, ctx.source_condition(), edit.afp_iterations
    )
    return invert(vfield, ctx.source_state(), solver)


def run_train(ctx: RunContext) -> RunOutcome:
    """Fit a CFM model on the configured mixture and score it."""
    cfg = ctx.config
    train_cfg = cfg.train.model_copy(update={"seed": cfg.seed})
    model = cfm_train(cfg.dataset, train_cfg)
    initial = model.history[0]["heldout_loss"]
    final = model.history[-1]["heldout_loss"]
    accuracy: dict[int, float] = {}
    if train_cfg.eval_samples:
        accuracy = conditional_accuracy(
            model, train_cfg.eval_samples, cfg.solver.n_steps, w=1.0, seed=cfg.seed
        )
    result = {
        "checkpoint": CHECKPOINT_FILE,
        "parameter_count": model.parameter_count,
        "initial_loss": initial,
        "final_loss": final,
        "loss_ratio": final / initial,
        "accuracy": {str(label): value for label, value in accuracy.items()},
        "min_accuracy": min(accuracy.values()) if accuracy else None,
        "history": model.history,
    }
    return RunOutcome(result=result, tables={"train_history": model.history}, model=model)


def run_invert(ctx: RunContext) -> RunOutcome:
    """Forward inversion plus the dense-reference endpoint error."""
    cfg = ctx.config
    vfield = ctx.velocity_field()
    z0 = ctx.source_state()
    before = vfield.count
    traj = invert(vfield, z0, cfg.solver)
    nfe = vfield.count - before
    reference = reference_solve(vfield.inner, z0, traj.condition, Direction.FORWARD)
    result = {
        "field": vfield.descriptor,
        "method": cfg.solver.method.value,
        "n_steps": cfg.solver.n_steps,
        "iterations": cfg.solver.iterations,
        "z1": traj.end.to_list(),
        "nfe": nfe,
        "expected_nfe": expected_nfe(cfg.solver.method, cfg.solver.n_steps, cfg.solver.iterations),
        "reference_endpoint_error": traj.end.distance(reference),
        "max_step_residual": traj.max_step_residual(),
    }
    return RunOutcome(result=result, trajectories={"forward": traj})


def run_reconstruct(ctx: RunContext) -> RunOutcome:
    """Inversion then backward Euler; Euler runs on certified fields also report the bound."""
    cfg = ctx.config
    vfield = ctx.velocity_field()
    trip = round_trip(vfield, ctx.source_state(), cfg.solver)
    bound: float | None = None
    bound_exp: float | None = None
    if (
        cfg.solver.method is SolverMethod.EULER
        and vfield.lipschitz_bound is not None
        and vfield.curvature_bound is not None
    ):
        bound, bound_exp = inversion_error_bound(
            vfield.lipschitz_bound, vfield.curvature_bound, cfg.solver.n_steps
        )
    result = {
        **trip.to_record(),
        "field": vfield.descriptor,
        "method": cfg.solver.method.value,
        "n_steps": cfg.solver.n_steps,
        "iterations": cfg.solver.iterations,
        "expected_forward_nfe": expected_nfe(
            cfg.solver.method, cfg.solver.n_steps, cfg.solver.iterations
        ),
        "bound": bound,
        "bound_exp": bound_exp,
        "within_bound": None if bound is None else trip.error <= bound + BOUND_TOL,
    }
    return RunOutcome(
        result=result,
        trajectories={"forward": trip.forward, "reconstruction": trip.recon.trajectory},
    )


def run_edit(ctx: RunContext) -> RunOutcome:
    """
    Controlled edit, the uncontrolled (alpha = 1) edit for comparison, the deviation
    decomposition of the uncontrolled run and the editing bound of the controlled run.
    """
    cfg = ctx.config
    vfield = ctx.velocity_field()
    c_tar = ctx.target_condition()
    source = _edit_source(ctx, vfield, cfg.edit)
    report = backward_edit(vfield, source, c_tar, cfg.edit)
    uncontrolled = backward_edit(
        vfield, source, c_tar, cfg.edit.model_copy(update={"alpha_override": 1.0})
    )

    inner = vfield.inner
    lipschitz, certified = _lipschitz_for(
        inner, source, [source.condition, c_tar, Condition.null()], cfg.seed
    )
    bound = turn_bound_report(report, inner, lipschitz, turn=1, certified=certified)
    result = {
        "field": vfield.descriptor,
        "edit": report.to_record(),
        "source_z0": source.start.to_list(),
        "deviation": report.edited.distance(source.start),
        "uncontrolled_deviation": uncontrolled.edited.distance(source.start),
        "decomposition": decomposition_accumulate(uncontrolled, inner).to_record(),
        "bound": bound.to_record(),
        "component_distances": {
            "edited": _component_distances(inner, report.edited),
            "source": _component_distances(inner, source.start),
            "uncontrolled": _component_distances(inner, uncontrolled.edited),
        },
    }
    return RunOutcome(
        result=result,
        tables={"edit_steps": [step.to_record() for step in report.steps]},
        trajectories={
            "source": source,
            "edit": report.trajectory,
            "uncontrolled": uncontrolled.trajectory,
        },
    )


def run_multiturn(ctx: RunContext) -> RunOutcome:
    """
    Sequential edits, each checked against its own editing bound, next to the same turns
    edited independently from the original source.

    chained_drift and single_turn_drift are both distances from the source state.
    """
    cfg = ctx.config
    if not cfg.turns:
        msg = "multi-turn runs need at least one turn"
        raise InvalidConfigError(msg)
    vfield = ctx.velocity_field()
    turns = [
        EditTurn(
            target=turn.target.to_condition(),
            gamma=turn.gamma,
            base_mask=mask_from_spec(turn.base_mask) if turn.base_mask is not None else None,
            alpha_override=turn.alpha_override,
        )
        for turn in cfg.turns
    ]
    reports = multi_turn_edit(vfield, ctx.source_state(), ctx.source_condition(), turns, cfg.edit)

    inner = vfield.inner
    inversion = reports[0].source
    singles = single_turn_edits(vfield, inversion, turns, cfg.edit)
    conditions = [inversion.condition, Condition.null(), *(turn.target for turn in turns)]
    lipschitz, certified = _lipschitz_for(inner, inversion, conditions, cfg.seed)
    rows: list[dict[str, Any]] = []
    records: list[dict[str, Any]] = []
    for index, (report, single) in enumerate(zip(reports, singles, strict=True), start=1):
        bound = turn_bound_report(report, inner, lipschitz, turn=index, certified=certified)
        rows.append(
            {
                "target": report.target.describe(),
                **bound.to_record(),
                "chained_drift": report.edited.distance(inversion.start),
                "single_turn_drift": single.edited.distance(inversion.start),
            }
        )
        records.append({**report.to_record(), "bound": bound.to_record()})

    result = {
        "field": vfield.descriptor,
        "turns": records,
        "final": reports[-1].edited.to_list(),
        "total_drift": reports[-1].edited.distance(inversion.start),
        "single_turn_drifts": [row["single_turn_drift"] for row in rows],
        "all_turns_within_bound": all(row["pass"] for row in rows),
    }
    trajectories = {"source": inversion}
    trajectories.update({f"turn_{i}": r.trajectory for i, r in enumerate(reports, start=1)})
    return RunOutcome(result=result, tables={"turns": rows}, trajectories=trajectories)


def run_perfect_latent(ctx: RunContext) -> RunOutcome:
    """
    Edits from the exact latent of an analytic field next to edits from solver latents.

    The exact latent reconstructs the source with no inversion error, so its uncontrolled
    deviation is pure trajectory divergence. Gaps are taken against the exact row.
    """
    cfg = ctx.config
    vfield = ctx.velocity_field()
    inner = vfield.inner
    if not isinstance(inner, AnalyticField):
        msg = "perfect-latent runs need an analytic field"
        raise InvalidConfigError(msg, kind=vfield.descriptor.get("kind"))
    z0 = ctx.source_state()
    c_src = ctx.source_condition()
    c_tar = ctx.target_condition()
    n_steps = cfg.edit.n_steps
    uncontrolled_cfg = cfg.edit.model_copy(update={"alpha_override": 1.0})

    exact = invert_exact(inner, z0, c_src, n_steps)
    latents: list[tuple[str, Trajectory, int]] = [("exact", exact, 0)]
    for method in cfg.perfect_latent.methods:
        before = vfield.count
        solver = SolverConfig.build(method, n_steps, c_src, cfg.edit.afp_iterations)
        traj = invert(vfield, z0, solver)
        latents.append((method.value, traj, vfield.count - before))

    rows: list[dict[str, Any]] = []
    for name, traj, nfe in latents:
        recon = reconstruct(vfield, traj.end, c_src, n_steps, z0)
        controlled = backward_edit(vfield, traj, c_tar, cfg.edit)
        uncontrolled = backward_edit(vfield, traj, c_tar, uncontrolled_cfg)
        rows.append(
            {
                "latent": name,
                "forward_nfe": nfe,
                "z1_gap": traj.end.distance(exact.end),
                "reconstruction_error": recon.error,
                "deviation": controlled.edited.distance(z0),
                "uncontrolled_deviation": uncontrolled.edited.distance(z0),
            }
        )
    reference = rows[0]
    for row in rows:
        row["deviation_gap"] = row["deviation"] - reference["deviation"]
        row["uncontrolled_gap"] = row["uncontrolled_deviation"] - reference["uncontrolled_deviation"]

    result = {
        "field": vfield.descriptor,
        "n_steps": n_steps,
        "rows": rows,
        "exact": {
            "z1": exact.end.to_list(),
            "reconstruction_error": reference["reconstruction_error"],
            "deviation": reference["deviation"],
            "uncontrolled_deviation": reference["uncontrolled_deviation"],
        },
    }
    return RunOutcome(
        result=result, tables={"perfect_latent": rows}, trajectories={"exact": exact}
    )


def _iteration_counts(method: SolverMethod, iterations: list[int]) -> list[int]:
    return iterations if method in (SolverMethod.FIXED_POINT, SolverMethod.AFP) else [0]


def run_bench(ctx: RunContext) -> RunOutcome:
    """
    Round-trip error and NFE for every (method, K, N) cell.

    euler_bound is the Euler inversion bound at that N (certified fields only) and
    within_euler_bound compares the row's error with it, for every method;
    only Euler rows are certified by it.
    """
    cfg = ctx.config
    vfield = ctx.velocity_field()
    z0 = ctx.source_state()
    condition = cfg.solver.condition.to_condition()
    rows: list[dict[str, Any]] = []
    nfe_matches = True
    for n_steps in cfg.bench.n_steps:
        bound: float | None = None
        if vfield.lipschitz_bound is not None and vfield.curvature_bound is not None:
            bound = inversion_error_bound(vfield.lipschitz_bound, vfield.curvature_bound, n_steps)[0]
        for method in cfg.bench.methods:
            for iterations in _iteration_counts(method, cfg.bench.iterations):
                solver = SolverConfig.build(method, n_steps, condition, max(iterations, 1))
                trip = round_trip(vfield, z0, solver)
                nfe_matches &= trip.forward_nfe == expected_nfe(method, n_steps, max(iterations, 1))
                rows.append(
                    {
                        "method": method.value,
                        "K": iterations,
                        "N": n_steps,
                        "nfe": trip.forward_nfe,
                        "error": trip.error,
                        "euler_bound": bound,
                        "within_euler_bound": (
                            None if bound is None else trip.error <= bound + BOUND_TOL
                        ),
                    }
                )

    euler = {row["N"]: row["error"] for row in rows if row["method"] == SolverMethod.EULER.value}
    afp_le_euler = all(
        row["error"] <= euler[row["N"]] + BOUND_TOL
        for row in rows
        if row["method"] == SolverMethod.AFP.value and row["N"] in euler
    )
    result = {
        "field": vfield.descriptor,
        "rows": rows,
        "summary": {"nfe_matches": nfe_matches, "afp_le_euler": afp_le_euler},
    }
    return RunOutcome(result=result, tables={"bench": rows})


def run_verify(ctx: RunContext) -> RunOutcome:
    """Every bound-verification suite on the analytic zoo."""
    cfg = ctx.config
    suites = run_suites(cfg.verify, cfg.seed)
    summary = {
        name: {"rows": len(rows), "failed": sum(1 for row in rows if not row["pass"])}
        for name, rows in suites.items()
    }
    result = {
        "passed": all(item["failed"] == 0 for item in summary.values()),
        "summary": summary,
        "suites": suites,
    }
    return RunOutcome(
        result=result, tables={f"verify_{name}": rows for name, rows in suites.items()}
    )


def _sweep_row(report: EditReport, source: Trajectory, uncontrolled: EditReport) -> dict[str, Any]:
    alphas = report.alphas
    return {
        "mean_alpha": sum(alphas) / len(alphas),
        "max_alpha": max(alphas),
        "deviation_from_source": report.edited.distance(source.start),
        "deviation_from_target": report.edited.distance(uncontrolled.edited),
    }


def run_sweep_alpha_schedulers(ctx: RunContext) -> RunOutcome:
    """
    Fixed alphas and the three schedulers on one edit; the target attractor is the
    uncontrolled edit's endpoint.
    """
    cfg = ctx.config
    vfield = ctx.velocity_field()
    c_tar = ctx.target_condition()
    source = _edit_source(ctx, vfield, cfg.edit)
    uncontrolled = backward_edit(
        vfield, source, c_tar, cfg.edit.model_copy(update={"alpha_override": 1.0})
    )
    variants: list[tuple[str, dict[str, Any]]] = [
        (f"fixed_{alpha:g}", {"alpha_override": alpha}) for alpha in cfg.sweep.fixed_alphas
    ]
    variants += [
        (scheduler.value, {"alpha_override": None, "scheduler": scheduler})
        for scheduler in (AlphaScheduler.DECAY, AlphaScheduler.COSINE, AlphaScheduler.COSINE_DECAY)
    ]
    rows = []
    for name, update in variants:
        report = backward_edit(vfield, source, c_tar, cfg.edit.model_copy(update=update))
        rows.append({"variant": name, **_sweep_row(report, source, uncontrolled)})
    return RunOutcome(
        result={"field": vfield.descriptor, "rows": rows}, tables={"sweep_alpha": rows}
    )


def run_sweep_guidance(ctx: RunContext) -> RunOutcome:
    """Decay rate x guidance scale grid with the default scheduler."""
    cfg = ctx.config
    vfield = ctx.velocity_field()
    c_tar = ctx.target_condition()
    source = _edit_source(ctx, vfield, cfg.edit)
    rows = []
    for w in cfg.sweep.guidance_scales:
        uncontrolled = backward_edit(
            vfield, source, c_tar, cfg.edit.model_copy(update={"w": w, "alpha_override": 1.0})
        )
        for gamma in cfg.sweep.gammas:
            update = {"w": w, "gamma": gamma, "alpha_override": None}
            report = backward_edit(vfield, source, c_tar, cfg.edit.model_copy(update=update))
            rows.append({"gamma": gamma, "w": w, **_sweep_row(report, source, uncontrolled)})
    return RunOutcome(
        result={"field": vfield.descriptor, "rows": rows}, tables={"sweep_guidance": rows}
    )


def run_grad_check(ctx: RunContext) -> RunOutcome:
    """Autograd vs central differences on a small mixed conditional/null batch."""
    cfg = ctx.config
    if cfg.field is None:
        model = init_model(cfg.dataset, cfg.train.model_copy(update={"seed": cfg.seed}))
    elif isinstance(cfg.field, TrainedFieldSpec):
        model = load_checkpoint(Path(cfg.field.checkpoint))
    else:
        msg = "gradient checks need a trained field or none"
        raise InvalidConfigError(msg, kind=cfg.field.kind)

    size = cfg.grad_check.batch_size
    rng = np.random.default_rng(cfg.seed)
    points, labels = sample_mixture(model.dataset, size, rng)
    noise = rng.standard_normal(points.shape)
    times = rng.uniform(0.0, 1.0, size)
    batch = [
        CfmPair(
            LatentState.from_flat(points[i]),
            LatentState.from_flat(noise[i]),
            Condition.of_label(int(labels[i])) if i % 2 == 0 else Condition.null(),
        )
        for i in range(size)
    ]
    error = cfm_grad_check(
        model,
        batch,
        [float(t) for t in times],
        n_params=cfg.grad_check.n_params,
        step=cfg.grad_check.step,
        seed=cfg.seed,
    )
    result = {
        "max_rel_error": error,
        "tolerance": GRAD_CHECK_TOL,
        "pass": error < GRAD_CHECK_TOL,
        "batch_size": size,
        "n_params": min(cfg.grad_check.n_params, model.parameter_count),
        "parameter_count": model.parameter_count,
    }
    return RunOutcome(result=result)


HANDLERS: dict[ExperimentKind, Callable[[RunContext], RunOutcome]] = {
    ExperimentKind.TRAIN: run_train,
    ExperimentKind.INVERT: run_invert,
    ExperimentKind.RECONSTRUCT: run_reconstruct,
    ExperimentKind.EDIT: run_edit,
    ExperimentKind.MULTI_TURN: run_multiturn,
    ExperimentKind.BENCH_SOLVERS: run_bench,
    ExperimentKind.VERIFY_BOUNDS: run_verify,
    ExperimentKind.SWEEP_ALPHA_SCHEDULERS: run_sweep_alpha_schedulers,
    ExperimentKind.SWEEP_GUIDANCE: run_sweep_guidance,
    ExperimentKind.GRAD_CHECK: run_grad_check,
    ExperimentKind.PERFECT_LATENT: run_perfect_latent,
}


def _execute(ctx: RunContext) -> RunOutcome:
    outcome = HANDLERS[ctx.experiment](ctx)
    write_artifacts(ctx, outcome)
    return outcome


def run(config: RunConfig, output_dir: Path | None = None, run_id: str = "") -> RunManifest:
    """
    Execute one run and write its artifacts.

    Args:
        config (RunConfig): Validated run config with experiment set.
        output_dir (Path, optional): Overrides config.output_dir; defaults to runs/<experiment>.
        run_id (str, optional): Fixed run id; a uuid4 is generated when empty.

    Returns:
        RunManifest: The manifest written to manifest.json.

    Raises:
        FlowLabError: After manifest.json and error.json are written for the failed run.
    """
    if config.experiment is None:
        msg = "run config names no experiment"
        raise InvalidConfigError(msg)
    target = output_dir or Path(config.output_dir or Path("runs") / config.experiment.value)
    ctx = RunContext(config=config, output_dir=Path(target), run_id=run_id)
    pipeline = RunIdMiddleware(MetricsMiddleware(_execute))

    started = datetime.now(UTC)
    clock = time.perf_counter()
    failure: FlowLabError | None = None
    try:
        pipeline(ctx)
    except FlowLabError as exc:
        failure = exc
        logger.error(
            "Run failed",
            extra={
                "experiment": config.experiment.value,
                "error": exc.message,
                "context": exc.context,
            },
        )

    error = ErrorRecord.model_validate(to_plain(failure.to_record())) if failure else None
    if error is not None:
        dump_json(error.model_dump(mode="json"), ctx.output_dir / ERROR_FILE)
        ctx.artifacts.append(ERROR_FILE)
    manifest = RunManifest(
        run_id=ctx.run_id,
        experiment=config.experiment.value,
        status=RunStatus.FAILED if failure else RunStatus.SUCCEEDED,
        version=__version__,
        seed=config.seed,
        started_at=started.isoformat(),
        finished_at=datetime.now(UTC).isoformat(),
        duration_seconds=time.perf_counter() - clock,
        nfe=ctx.nfe,
        config=config.model_dump(mode="json"),
        artifacts=sorted(set(ctx.artifacts)),
        error=error,
    )
    dump_json(manifest.model_dump(mode="json"), ctx.output_dir / MANIFEST_FILE)
    if failure is not None:
        raise failure
    logger.info(
        "Run finished",
        extra={"experiment": config.experiment.value, "output_dir": str(ctx.output_dir)},
    )
    return manifest


def compare_trajectories(a: Path, b: Path) -> float:
    """
    Max per-step state distance between two trajectory files.

    Raises:
        LayoutMismatchError: If step counts or layouts differ.
    """
    return max_state_deviation(read_trajectory(a), read_trajectory(b))
