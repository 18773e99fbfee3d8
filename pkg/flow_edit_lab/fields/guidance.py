"""
Classifier-free guidance and guided backward sampling.
"""

from flow_edit_lab.config import logger
from flow_edit_lab.core.latent import Condition, LatentState, TimeGrid
from flow_edit_lab.core.trajectory import Direction, Trajectory
from flow_edit_lab.errors import InvalidParameterError, NonFiniteStateError
from flow_edit_lab.fields.base import VelocityField
from flow_edit_lab.schemas.run import CfgMode


def _check_scale(w: float) -> None:
    if not w >= 0.0:
        msg = "guidance scale must be non-negative"
        logger.warning(msg, extra={"w": w})
        raise InvalidParameterError(msg, w=w)


def cfg_velocity(
    field: VelocityField, z: LatentState, t: float, c: Condition, w: float
) -> LatentState:
    """
    Guided velocity v(z,t,null) + w * (v(z,t,c) - v(z,t,null)).

    Both branches are always evaluated (2 NFE). w = 1 returns the conditional branch and
    w = 0 the unconditional branch without arithmetic, so both identities are bit-exact.
    """
    _check_scale(w)
    conditional = field.eval(z, t, c)
    unconditional = field.eval(z, t, Condition.null())
    if w == 1.0:
        return conditional
    if w == 0.0:
        return unconditional
    return unconditional + w * (conditional - unconditional)


def cfg_velocity_src_anchored(
    field: VelocityField,
    z: LatentState,
    t: float,
    c_src: Condition,
    c_tar: Condition,
    w: float,
) -> LatentState:
    """Guided velocity extrapolated from the source condition instead of null."""
    _check_scale(w)
    source = field.eval(z, t, c_src)
    target = field.eval(z, t, c_tar)
    if w == 1.0:
        return target
    if w == 0.0:
        return source
    return source + w * (target - source)


def guided_velocity(
    field: VelocityField,
    z: LatentState,
    t: float,
    c_src: Condition,
    c_tar: Condition,
    w: float,
    cfg_mode: CfgMode,
) -> LatentState:
    """Dispatch on the guidance anchor."""
    if cfg_mode is CfgMode.SOURCE_ANCHORED:
        return cfg_velocity_src_anchored(field, z, t, c_src, c_tar, w)
    return cfg_velocity(field, z, t, c_tar, w)


def reference_velocity(
    field: VelocityField, z: LatentState, t: float, c_src: Condition, cfg_mode: CfgMode
) -> LatentState:
    """The branch guidance extrapolates away from (null, or the source condition)."""
    anchor = c_src if cfg_mode is CfgMode.SOURCE_ANCHORED else Condition.null()
    return field.eval(z, t, anchor)


def generate(
    field: VelocityField, z1: LatentState, c: Condition, n_steps: int, w: float = 1.0
) -> Trajectory:
    """
    Sample from noise with guided backward Euler: z_i = z_{i+1} - dt * cfg(z_{i+1}, t_{i+1}).

    Args:
        field (VelocityField): Velocity field.
        z1 (LatentState): Noise-side state at t = 1.
        c (Condition): Condition to sample.
        n_steps (int): Uniform steps N.
        w (float): Guidance scale.

    Returns:
        Trajectory: Backward trajectory; states[0] is the sample.
    """
    grid = TimeGrid(n_steps)
    states: list[LatentState] = [z1]
    velocities: list[LatentState] = []
    current = z1
    for i in range(n_steps, 0, -1):
        try:
            velocity = cfg_velocity(field, current, grid.t(i), c, w)
            current = current - grid.dt * velocity
        except NonFiniteStateError as exc:
            exc.with_context(step=i)
            raise
        velocities.append(velocity)
        states.append(current)
    return Trajectory(
        grid=grid,
        states=tuple(reversed(states)),
        velocities=tuple(reversed(velocities)),
        condition=c,
        direction=Direction.BACKWARD,
    )
