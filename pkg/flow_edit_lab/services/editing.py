"""
Backward editing by trajectory interpolation, and multi-turn editing.

Each backward step blends the cached source velocity (finite difference of the stored
source trajectory, so it costs no evaluations) with the guided target velocity:
V_edit = V_src + alpha * M * (V_tar - V_src).
"""

from dataclasses import dataclass
from typing import Any

from flow_edit_lab.config import logger
from flow_edit_lab.core.latent import Condition, LatentState
from flow_edit_lab.core.similarity import spatial_cosine
from flow_edit_lab.core.trajectory import Direction, Trajectory, finite_diff_velocity
from flow_edit_lab.errors import (
    FlowLabError,
    InvalidParameterError,
    LayoutMismatchError,
    step_context,
)
from flow_edit_lab.fields.base import CountingField, VelocityField
from flow_edit_lab.fields.guidance import guided_velocity
from flow_edit_lab.schemas.run import (
    AlphaScheduler,
    EditConfig,
    MaskConfig,
    SolverConfig,
    SolverMethod,
)
from flow_edit_lab.services.inversion import invert
from flow_edit_lab.services.masking import Mask, mask_refine


def alpha_from_cosine(
    cosine: float,
    t_next: float,
    gamma: float,
    clamp: bool = True,
    scheduler: AlphaScheduler = AlphaScheduler.COSINE_DECAY,
) -> float:
    """
    Interpolation coefficient from a precomputed cosine.

    With clamp the cosine is floored at 0 before scheduling; without it the raw cosine is
    scheduled and only the final coefficient is clipped to [0, 1].
    """
    if not 0.0 <= t_next <= 1.0:
        msg = "t_next must lie in [0, 1]"
        raise InvalidParameterError(msg, t_next=t_next)
    affinity = max(cosine, 0.0) if clamp else cosine
    decay = 1.0 - t_next**gamma
    if scheduler is AlphaScheduler.DECAY:
        alpha = decay
    elif scheduler is AlphaScheduler.COSINE:
        alpha = affinity
    else:
        alpha = affinity * decay
    return float(min(max(alpha, 0.0), 1.0))


def alpha_schedule(
    v_src: LatentState,
    v_tar: LatentState,
    t_next: float,
    gamma: float,
    clamp: bool = True,
    scheduler: AlphaScheduler = AlphaScheduler.COSINE_DECAY,
) -> float:
    """alpha = cos(v_src, v_tar) * (1 - t_next ** gamma), in [0, 1]."""
    return alpha_from_cosine(spatial_cosine(v_src, v_tar), t_next, gamma, clamp, scheduler)


def edit_velocity(
    v_src: LatentState, v_tar: LatentState, alpha: float, mask: Mask | None = None
) -> LatentState:
    """
    V_src + alpha * M * (V_tar - V_src), the mask broadcast over channels.

    alpha = 0 returns v_src and alpha = 1 without a mask returns v_tar unchanged. An all-ones
    mask is treated as no mask.

    Raises:
        LayoutMismatchError: If layouts differ or the mask does not match the grid.
    """
    v_src.require_same_layout(v_tar)
    if mask is not None:
        if not v_src.layout.is_grid or mask.shape != v_src.layout.spatial_shape:
            msg = "mask does not match the latent grid"
            raise LayoutMismatchError(msg, mask=list(mask.shape), layout=v_src.layout.to_record())
        if mask.is_all_ones():
            mask = None
    if alpha == 0.0:
        return v_src
    if mask is None:
        if alpha == 1.0:
            return v_tar
        return v_src + alpha * (v_tar - v_src)
    gated = (v_tar.values - v_src.values) * mask.values[:, :, None]
    return v_src + alpha * v_src.with_values(gated)


@dataclass(frozen=True)
class EditStep:
    """Diagnostics of one backward step i (evaluated at t_i, decay at t_{i-1})."""

    i: int
    t: float
    alpha: float
    cosine: float
    delta_v_norm: float
    mask_mean: float | None

    def to_record(self) -> dict[str, Any]:
        return {
            "i": self.i,
            "t": self.t,
            "alpha": self.alpha,
            "cosine": self.cosine,
            "delta_v_norm": self.delta_v_norm,
            "mask_mean": self.mask_mean,
        }


@dataclass(frozen=True)
class EditReport:
    """Result of one backward edit, anchored to the source trajectory it replayed."""

    edited: LatentState
    trajectory: Trajectory
    source: Trajectory
    target: Condition
    config: EditConfig
    steps: tuple[EditStep, ...]
    nfe: int

    @property
    def alphas(self) -> list[float]:
        return [step.alpha for step in self.steps]

    def to_record(self) -> dict[str, Any]:
        return {
            "steps": [step.to_record() for step in self.steps],
            "edited": self.edited.to_list(),
            "nfe": self.nfe,
            "source_condition": self.source.condition.to_record(),
            "target_condition": self.target.to_record(),
            "config": self.config.model_dump(mode="json"),
        }


def backward_edit(
    field: VelocityField,
    src_traj: Trajectory,
    c_tar: Condition,
    config: EditConfig,
    base_mask: Mask | None = None,
) -> EditReport:
    """
    Edit by integrating backward from the source endpoint with interpolated velocities.

    The source trajectory may be forward (an inversion) or backward (a previous edit); in
    both cases finite differences of its states recover the step velocities.

    Args:
        field (VelocityField): Velocity field.
        src_traj (Trajectory): Cached source trajectory with N = config.n_steps.
        c_tar (Condition): Target condition.
        config (EditConfig): Guidance, scheduler and mask settings.
        base_mask (Mask, optional): Overrides config.mask.base.

    Returns:
        EditReport: Edited state, backward trajectory, per-step records and NFE (2N).

    Raises:
        InvalidParameterError: If the step counts differ.
        NumericalError: On non-finite states, with the step index.
    """
    if src_traj.n_steps != config.n_steps:
        msg = "source trajectory and edit config disagree on N"
        logger.warning(msg, extra={"source_steps": src_traj.n_steps, "n_steps": config.n_steps})
        raise InvalidParameterError(msg, source_steps=src_traj.n_steps, n_steps=config.n_steps)

    counter = CountingField(field)
    grid = src_traj.grid
    c_src = src_traj.condition
    mask_cfg: MaskConfig | None = config.mask
    current = src_traj.end
    states, velocities, steps = [current], [], []
    for i in range(grid.n_steps, 0, -1):
        with step_context(step=i):
            v_src = finite_diff_velocity(src_traj, i)
            v_tar = guided_velocity(
                counter, current, grid.t(i), c_src, c_tar, config.w, config.cfg_mode
            )
            cosine = spatial_cosine(v_src, v_tar)
            if config.alpha_override is not None:
                alpha = config.alpha_override
            else:
                alpha = alpha_from_cosine(
                    cosine,
                    grid.t(i - 1),
                    config.gamma,
                    config.clamp_negative_cosine,
                    config.scheduler,
                )
            delta_v = v_tar - v_src
            mask = mask_refine(delta_v, mask_cfg, base_mask) if mask_cfg is not None else None
            v_edit = edit_velocity(v_src, v_tar, alpha, mask)
            current = current - grid.dt * v_edit
        states.append(current)
        velocities.append(v_edit)
        steps.append(
            EditStep(
                i=i,
                t=grid.t(i),
                alpha=alpha,
                cosine=cosine,
                delta_v_norm=delta_v.norm(),
                mask_mean=None if mask is None else mask.mean(),
            )
        )

    trajectory = Trajectory(
        grid=grid,
        states=tuple(reversed(states)),
        velocities=tuple(reversed(velocities)),
        condition=c_tar,
        direction=Direction.BACKWARD,
    )
    logger.info(
        "Backward edit finished",
        extra={
            "n_steps": grid.n_steps,
            "nfe": counter.count,
            "target": c_tar.describe(),
            "max_alpha": max(step.alpha for step in steps),
        },
    )
    return EditReport(
        edited=trajectory.start,
        trajectory=trajectory,
        source=src_traj,
        target=c_tar,
        config=config,
        steps=tuple(steps),
        nfe=counter.count,
    )


@dataclass(frozen=True)
class EditTurn:
    """One multi-turn step: target plus optional per-turn overrides."""

    target: Condition
    gamma: float | None = None
    base_mask: Mask | None = None
    alpha_override: float | None = None


def _turn_config(config: EditConfig, turn: EditTurn) -> EditConfig:
    update: dict[str, Any] = {}
    if turn.gamma is not None:
        update["gamma"] = turn.gamma
    if turn.alpha_override is not None:
        update["alpha_override"] = turn.alpha_override
    if turn.base_mask is not None and config.mask is None:
        update["mask"] = MaskConfig()
    return config.model_copy(update=update)


def _edit_turn(
    field: VelocityField, source: Trajectory, turn: EditTurn, config: EditConfig, index: int
) -> EditReport:
    try:
        return backward_edit(field, source, turn.target, _turn_config(config, turn), turn.base_mask)
    except FlowLabError as exc:
        exc.with_context(turn=index)
        logger.error("Multi-turn edit aborted", extra={"turn": index, "error": exc.message})
        raise


def multi_turn_edit(
    field: VelocityField,
    z0_src: LatentState,
    c_src: Condition,
    turns: list[EditTurn],
    config: EditConfig,
) -> list[EditReport]:
    """
    Invert once with the amortized fixed-point solver, then edit turn by turn; each turn's
    edit trajectory becomes the next turn's source trajectory.

    Raises:
        InvalidParameterError: If no turns are given.
        FlowLabError: Any turn failure, with the turn index in its context.
    """
    if not turns:
        msg = "multi-turn editing needs at least one turn"
        raise InvalidParameterError(msg)
    solver = SolverConfig.build(SolverMethod.AFP, config.n_steps, c_src, config.afp_iterations)
    inversion = invert(field, z0_src, solver)

    reports: list[EditReport] = []
    source = inversion
    for index, turn in enumerate(turns, start=1):
        report = _edit_turn(field, source, turn, config, index)
        logger.info(
            "Turn finished",
            extra={
                "turn": index,
                "target": turn.target.describe(),
                "drift": report.edited.distance(source.start),
            },
        )
        reports.append(report)
        source = report.trajectory
    return reports


def single_turn_edits(
    field: VelocityField, source: Trajectory, turns: list[EditTurn], config: EditConfig
) -> list[EditReport]:
    """
    Every turn edited from the same original source trajectory, the baseline that
    multi-turn drift is compared against.

    Raises:
        InvalidParameterError: If no turns are given.
        FlowLabError: Any turn failure, with the turn index in its context.
    """
    if not turns:
        msg = "multi-turn editing needs at least one turn"
        raise InvalidParameterError(msg)
    return [
        _edit_turn(field, source, turn, config, index) for index, turn in enumerate(turns, start=1)
    ]
