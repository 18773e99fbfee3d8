"""
Forward inversion solvers, backward reconstruction and the dense reference integrator.

Evaluation counts per forward solve (N steps, K iterations):
    euler        N
    fixed_point  N * (K + 1)
    afp          N + K   (1 + K evaluations at the first step, one correction afterwards)
    midpoint     2 * N
Backward reconstruction costs N.
"""

from dataclasses import dataclass
from typing import Any

import numpy as np

from flow_edit_lab.config import logger
from flow_edit_lab.core.latent import Condition, LatentState, TimeGrid
from flow_edit_lab.core.trajectory import Direction, Trajectory
from flow_edit_lab.errors import InvalidParameterError, NumericalError, step_context
from flow_edit_lab.fields.analytic import AnalyticField
from flow_edit_lab.fields.base import CountingField, VelocityField
from flow_edit_lab.schemas.run import SolverConfig, SolverMethod

REFERENCE_MIN_STEPS = 1000


def expected_nfe(method: SolverMethod, n_steps: int, iterations: int = 1) -> int:
    """Documented forward evaluation count."""
    if method is SolverMethod.EULER:
        return n_steps
    if method is SolverMethod.FIXED_POINT:
        return n_steps * (iterations + 1)
    if method is SolverMethod.AFP:
        return n_steps + iterations
    return 2 * n_steps


def _require_method(cfg: SolverConfig, *allowed: SolverMethod) -> None:
    if cfg.method not in allowed:
        msg = "solver config method does not match the solver"
        raise InvalidParameterError(msg, method=cfg.method.value)


def _forward(
    grid: TimeGrid, states: list[LatentState], velocities: list[LatentState], condition: Condition
) -> Trajectory:
    return Trajectory(
        grid=grid,
        states=tuple(states),
        velocities=tuple(velocities),
        condition=condition,
        direction=Direction.FORWARD,
    )


def invert_euler(field: VelocityField, z0: LatentState, cfg: SolverConfig) -> Trajectory:
    """Explicit Euler from t = 0 to t = 1 at w = 1."""
    _require_method(cfg, SolverMethod.EULER)
    grid = TimeGrid(cfg.n_steps)
    condition = cfg.condition.to_condition()
    states, velocities = [z0], []
    for i in range(cfg.n_steps):
        with step_context(step=i):
            velocity = field.eval(states[i], grid.t(i), condition)
            states.append(states[i] + grid.dt * velocity)
        velocities.append(velocity)
    return _forward(grid, states, velocities, condition)


def solve_fixed_point_step(
    field: VelocityField,
    z: LatentState,
    t_i: float,
    t_next: float,
    v_init: LatentState,
    iterations: int,
    condition: Condition | None = None,
) -> tuple[LatentState, list[float]]:
    """
    Iterate v <- v(z + dt * v, t_next, c) exactly `iterations` times from v_init.

    Args:
        field (VelocityField): Velocity field.
        z (LatentState): State at t_i.
        t_i (float): Current time.
        t_next (float): Next time; dt = t_next - t_i.
        v_init (LatentState): Initial velocity.
        iterations (int): K >= 1.
        condition (Condition, optional): Condition; null when omitted.

    Returns:
        tuple[LatentState, list[float]]: v^K and the K residuals ||v^{k+1} - v^k||.

    Raises:
        InvalidParameterError: If K < 1 or dt <= 0.
        NonFiniteStateError: If an iterate is not finite.
    """
    if iterations < 1:
        msg = "fixed-point iteration needs K >= 1"
        raise InvalidParameterError(msg, iterations=iterations)
    dt = t_next - t_i
    if not dt > 0:
        msg = "fixed-point step needs t_next > t_i"
        raise InvalidParameterError(msg, t_i=t_i, t_next=t_next)
    condition = condition or Condition.null()
    velocity = v_init
    residuals: list[float] = []
    for _ in range(iterations):
        refined = field.eval(z + dt * velocity, t_next, condition)
        residuals.append(refined.distance(velocity))
        velocity = refined
    return velocity, residuals


def invert_fixed_point(
    field: VelocityField,
    z0: LatentState,
    cfg: SolverConfig,
    residuals: list[list[float]] | None = None,
) -> Trajectory:
    """
    Fixed-point refinement at every step, each initialized with the explicit Euler velocity.

    Args:
        residuals (list, optional): Receives the residual sequence of every step.
    """
    _require_method(cfg, SolverMethod.FIXED_POINT)
    grid = TimeGrid(cfg.n_steps)
    condition = cfg.condition.to_condition()
    states, velocities = [z0], []
    for i in range(cfg.n_steps):
        with step_context(step=i):
            initial = field.eval(states[i], grid.t(i), condition)
            velocity, step_residuals = solve_fixed_point_step(
                field, states[i], grid.t(i), grid.t(i + 1), initial, cfg.iterations, condition
            )
            states.append(states[i] + grid.dt * velocity)
        velocities.append(velocity)
        if residuals is not None:
            residuals.append(step_residuals)
    return _forward(grid, states, velocities, condition)


def invert_afp(field: VelocityField, z0: LatentState, cfg: SolverConfig) -> Trajectory:
    """
    Amortized fixed-point inversion.

    The first step refines the Euler velocity K times; every later step predicts with the
    previous step's velocity and spends one evaluation on the correction at t_{i+1}.
    """
    _require_method(cfg, SolverMethod.AFP)
    grid = TimeGrid(cfg.n_steps)
    condition = cfg.condition.to_condition()
    with step_context(step=0):
        initial = field.eval(z0, grid.t(0), condition)
        velocity, _ = solve_fixed_point_step(
            field, z0, grid.t(0), grid.t(1), initial, cfg.iterations, condition
        )
        states, velocities = [z0, z0 + grid.dt * velocity], [velocity]
    for i in range(1, cfg.n_steps):
        with step_context(step=i):
            predicted = states[i] + grid.dt * velocities[-1]
            velocity = field.eval(predicted, grid.t(i + 1), condition)
            states.append(states[i] + grid.dt * velocity)
        velocities.append(velocity)
    return _forward(grid, states, velocities, condition)


def invert_midpoint(field: VelocityField, z0: LatentState, cfg: SolverConfig) -> Trajectory:
    """Explicit midpoint rule; the stored velocity is the half-step velocity."""
    _require_method(cfg, SolverMethod.MIDPOINT)
    grid = TimeGrid(cfg.n_steps)
    condition = cfg.condition.to_condition()
    half = 0.5 * grid.dt
    states, velocities = [z0], []
    for i in range(cfg.n_steps):
        with step_context(step=i):
            slope = field.eval(states[i], grid.t(i), condition)
            velocity = field.eval(states[i] + half * slope, grid.t(i) + half, condition)
            states.append(states[i] + grid.dt * velocity)
        velocities.append(velocity)
    return _forward(grid, states, velocities, condition)


_SOLVERS = {
    SolverMethod.EULER: invert_euler,
    SolverMethod.FIXED_POINT: invert_fixed_point,
    SolverMethod.AFP: invert_afp,
    SolverMethod.MIDPOINT: invert_midpoint,
}


def invert(field: VelocityField, z0: LatentState, cfg: SolverConfig) -> Trajectory:
    """Dispatch on cfg.method."""
    counter = CountingField(field)
    traj = _SOLVERS[cfg.method](counter, z0, cfg)
    logger.debug(
        "Inversion finished",
        extra={"method": cfg.method.value, "n_steps": cfg.n_steps, "nfe": counter.count},
    )
    return traj


def invert_exact(
    field: AnalyticField, z0: LatentState, condition: Condition, n_steps: int
) -> Trajectory:
    """
    The latent that backward Euler maps back onto z0 exactly (a perfect latent).

    Each step solves z_{i+1} = z_i + dt * v(z_{i+1}, t_{i+1}, c). With the affine drift
    v = A z + b(t, c) this is the linear system (I - dt A) z_{i+1} = z_i + dt b(t_{i+1}, c),
    so no fixed-point iteration is involved. The stored velocity of step i is
    v(z_{i+1}, t_{i+1}, c), the one reconstruction evaluates.

    Args:
        field (AnalyticField): Closed-form field.
        z0 (LatentState): Source state.
        condition (Condition): Inversion condition.
        n_steps (int): Uniform steps N.

    Returns:
        Trajectory: Forward trajectory ending at the perfect latent.

    Raises:
        NumericalError: If I - dt A is singular for this field and step size.
    """
    grid = TimeGrid(n_steps)
    size = z0.layout.size
    identity = np.eye(size)
    states, velocities = [z0], []
    for i in range(n_steps):
        t_next = grid.t(i + 1)
        with step_context(step=i):
            system = identity - grid.dt * field.linear_part(size, t_next)
            rhs = states[i].flatten() + grid.dt * field.velocity(np.zeros(size), t_next, condition)
            try:
                solved = np.linalg.solve(system, rhs)
            except np.linalg.LinAlgError as exc:
                msg = "implicit step has no unique solution"
                raise NumericalError(msg, dt=grid.dt) from exc
            state = z0.with_values(solved)
            states.append(state)
            velocities.append(field.eval(state, t_next, condition))
    return _forward(grid, states, velocities, condition)


@dataclass(frozen=True)
class ReconReport:
    """Backward reconstruction result."""

    z0_hat: LatentState
    trajectory: Trajectory
    error: float | None
    nfe: int

    def to_record(self) -> dict[str, Any]:
        return {
            "z0_hat": self.z0_hat.to_list(),
            "error": self.error,
            "nfe": self.nfe,
        }


def reconstruct(
    field: VelocityField,
    z1: LatentState,
    condition: Condition,
    n_steps: int,
    z0: LatentState | None = None,
) -> ReconReport:
    """
    Backward Euler from t = 1: z_i = z_{i+1} - dt * v(z_{i+1}, t_{i+1}, c).

    Args:
        field (VelocityField): Velocity field.
        z1 (LatentState): Noise-side state.
        condition (Condition): Condition (no guidance).
        n_steps (int): Uniform steps N.
        z0 (LatentState, optional): Ground truth for the error.

    Returns:
        ReconReport: Reconstructed state, backward trajectory, error and NFE.
    """
    counter = CountingField(field)
    grid = TimeGrid(n_steps)
    states, velocities = [z1], []
    for i in range(n_steps, 0, -1):
        with step_context(step=i):
            velocity = counter.eval(states[-1], grid.t(i), condition)
            states.append(states[-1] - grid.dt * velocity)
        velocities.append(velocity)
    traj = Trajectory(
        grid=grid,
        states=tuple(reversed(states)),
        velocities=tuple(reversed(velocities)),
        condition=condition,
        direction=Direction.BACKWARD,
    )
    error = None if z0 is None else traj.start.distance(z0)
    return ReconReport(z0_hat=traj.start, trajectory=traj, error=error, nfe=counter.count)


@dataclass(frozen=True)
class RoundTrip:
    """Inversion followed by reconstruction under the same condition."""

    forward: Trajectory
    recon: ReconReport
    forward_nfe: int

    @property
    def error(self) -> float:
        return self.recon.error if self.recon.error is not None else float("nan")

    def to_record(self) -> dict[str, Any]:
        return {
            **self.recon.to_record(),
            "z1": self.forward.end.to_list(),
            "forward_nfe": self.forward_nfe,
            "backward_nfe": self.recon.nfe,
        }


def round_trip(field: VelocityField, z0: LatentState, cfg: SolverConfig) -> RoundTrip:
    """Invert with cfg, reconstruct with backward Euler, and measure ||z0_hat - z0||."""
    counter = CountingField(field)
    forward = _SOLVERS[cfg.method](counter, z0, cfg)
    recon = reconstruct(field, forward.end, cfg.condition.to_condition(), cfg.n_steps, z0)
    logger.debug(
        "Round trip finished",
        extra={"method": cfg.method.value, "n_steps": cfg.n_steps, "error": recon.error},
    )
    return RoundTrip(forward=forward, recon=recon, forward_nfe=counter.count)


def rk4_path(
    field: VelocityField,
    z: LatentState,
    condition: Condition,
    direction: Direction,
    n_steps: int,
) -> list[LatentState]:
    """Classical RK4 states over [0, 1] (forward from t = 0, backward from t = 1)."""
    grid = TimeGrid(n_steps)
    h = grid.dt if direction is Direction.FORWARD else -grid.dt
    t = 0.0 if direction is Direction.FORWARD else 1.0
    path = [z]
    current = z
    for i in range(n_steps):
        with step_context(step=i):
            k1 = field.eval(current, t, condition)
            k2 = field.eval(current + (0.5 * h) * k1, t + 0.5 * h, condition)
            k3 = field.eval(current + (0.5 * h) * k2, t + 0.5 * h, condition)
            k4 = field.eval(current + h * k3, t + h, condition)
            current = current + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        path.append(current)
        t = grid.t(i + 1) if direction is Direction.FORWARD else 1.0 - grid.t(i + 1)
    return path


def rk4_integrate(
    field: VelocityField,
    z: LatentState,
    condition: Condition,
    direction: Direction,
    n_steps: int,
) -> LatentState:
    """RK4 endpoint at any resolution (used by convergence studies)."""
    return rk4_path(field, z, condition, direction, n_steps)[-1]


def reference_solve(
    field: VelocityField,
    z: LatentState,
    condition: Condition,
    direction: Direction,
    dense_steps: int = REFERENCE_MIN_STEPS,
) -> LatentState:
    """
    Dense RK4 endpoint used as ground truth.

    Raises:
        InvalidParameterError: If dense_steps < 1000.
    """
    if dense_steps < REFERENCE_MIN_STEPS:
        msg = "reference solves need at least 1000 steps"
        raise InvalidParameterError(msg, dense_steps=dense_steps)
    return rk4_integrate(field, z, condition, direction, dense_steps)
