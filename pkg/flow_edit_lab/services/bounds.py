"""
Error-bound formulas, empirical constant estimators and the edit decomposition.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from flow_edit_lab.config import logger
from flow_edit_lab.core.latent import Condition, LatentState
from flow_edit_lab.core.trajectory import Direction, Trajectory, finite_diff_velocity
from flow_edit_lab.errors import InvalidInputError, InvalidParameterError
from flow_edit_lab.fields.base import VelocityField
from flow_edit_lab.fields.guidance import guided_velocity, reference_velocity
from flow_edit_lab.schemas.run import CfgMode
from flow_edit_lab.services.editing import EditReport
from flow_edit_lab.services.inversion import REFERENCE_MIN_STEPS, rk4_path

MIN_LIPSCHITZ_PAIRS = 1000
MIN_CURVATURE_STEPS = 4
# Pairs closer than this are skipped by the Lipschitz estimator
MIN_SEPARATION = 1e-12


def inversion_error_bound(lipschitz: float, curvature: float, n_steps: int) -> tuple[float, float]:
    """
    Euler round-trip error bounds (M dt / L)((1 + L dt)^N - 1) and (M dt / L)(e^L - 1).

    L = 0 uses the continuous extension M * dt for both.

    Raises:
        InvalidParameterError: If L < 0, M < 0 or N < 1.
    """
    if lipschitz < 0 or curvature < 0 or n_steps < 1:
        msg = "bound needs L >= 0, M >= 0 and N >= 1"
        raise InvalidParameterError(msg, L=lipschitz, M=curvature, n_steps=n_steps)
    dt = 1.0 / n_steps
    if lipschitz == 0.0:
        return curvature * dt, curvature * dt
    scale = curvature * dt / lipschitz
    finite = scale * math.expm1(n_steps * math.log1p(lipschitz * dt))
    return finite, scale * math.expm1(lipschitz)


def editing_error_bound(delta_max: float, lipschitz: float, alpha: float) -> float:
    """
    Editing bound B(alpha) = (delta_max / L)(e^{alpha L} - 1); L = 0 gives delta_max * alpha.

    Raises:
        InvalidParameterError: If alpha is outside [0, 1] or L < 0.
    """
    if not 0.0 <= alpha <= 1.0 or lipschitz < 0:
        msg = "bound needs alpha in [0, 1] and L >= 0"
        raise InvalidParameterError(msg, alpha=alpha, L=lipschitz)
    if lipschitz == 0.0:
        return delta_max * alpha
    return delta_max / lipschitz * math.expm1(alpha * lipschitz)


def interpolation_bound(
    delta_max: float, lipschitz: float, alphas: Sequence[float], dt: float
) -> float:
    """
    Finite-step editing bound for a time-varying alpha profile.

    Unrolls E_{i-1} <= (1 + alpha_i L dt) E_i + alpha_i dt delta_max from E_N = 0, with
    alphas given in backward step order (i = N..1). Never exceeds editing_error_bound at the
    profile's maximum alpha.
    """
    error = 0.0
    for alpha in alphas:
        error = (1.0 + alpha * lipschitz * dt) * error + alpha * dt * delta_max
    return error


def convexity_gap(delta_max: float, lipschitz: float, n_points: int = 99) -> float:
    """max over a uniform interior alpha grid of B(alpha) - alpha * B(1) (negative for L > 0)."""
    full = editing_error_bound(delta_max, lipschitz, 1.0)
    alphas = [i / (n_points + 1) for i in range(1, n_points + 1)]
    return max(editing_error_bound(delta_max, lipschitz, a) - a * full for a in alphas)


def _ball_samples(
    rng: np.random.Generator, n: int, center: np.ndarray, radius: float
) -> np.ndarray:
    directions = rng.standard_normal((n, center.size))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.uniform(0.0, 1.0, n) ** (1.0 / center.size)
    return center + directions * radii[:, None]


def estimate_lipschitz(
    field: VelocityField,
    condition: Condition,
    center: LatentState,
    radius: float,
    n_pairs: int = 10_000,
    seed: int = 0,
) -> float:
    """
    max ||v(z) - v(z')|| / ||z - z'|| over random pairs in a ball, each at a random t.

    Raises:
        InvalidParameterError: If n_pairs < 1000 or radius <= 0.
    """
    if n_pairs < MIN_LIPSCHITZ_PAIRS or radius <= 0:
        msg = "Lipschitz estimation needs >= 1000 pairs and a positive radius"
        raise InvalidParameterError(msg, n_pairs=n_pairs, radius=radius)
    rng = np.random.default_rng(seed)
    base = center.flatten()
    left = _ball_samples(rng, n_pairs, base, radius)
    right = _ball_samples(rng, n_pairs, base, radius)
    times = rng.uniform(0.0, 1.0, n_pairs)
    best = 0.0
    for a, b, t in zip(left, right, times, strict=True):
        separation = float(np.linalg.norm(a - b))
        if separation < MIN_SEPARATION:
            continue
        delta = field.velocity(a, float(t), condition) - field.velocity(b, float(t), condition)
        best = max(best, float(np.linalg.norm(delta)) / separation)
    return best


def estimate_curvature(
    field: VelocityField, traj: Trajectory, dense_steps: int = REFERENCE_MIN_STEPS
) -> float:
    """
    max ||v(Z_{j+1}, t_{j+1}) - v(Z_j, t_j)|| / h along a dense RK4 re-solve of the trajectory.

    Raises:
        InvalidParameterError: If the trajectory has fewer than 4 steps or dense_steps < 1000.
    """
    if traj.n_steps < MIN_CURVATURE_STEPS or dense_steps < REFERENCE_MIN_STEPS:
        msg = "curvature estimation needs N >= 4 and a dense re-solve of >= 1000 steps"
        raise InvalidParameterError(msg, n_steps=traj.n_steps, dense_steps=dense_steps)
    forward = traj.direction is Direction.FORWARD
    start = traj.start if forward else traj.end
    path = rk4_path(field, start, traj.condition, traj.direction, dense_steps)
    h = 1.0 / dense_steps
    times = [j * h if forward else 1.0 - j * h for j in range(dense_steps + 1)]
    velocities = [field.eval(z, t, traj.condition) for z, t in zip(path, times, strict=True)]
    return max(
        velocities[j + 1].distance(velocities[j]) / h for j in range(dense_steps)
    )


def delta_max_hat(
    field: VelocityField,
    src_traj: Trajectory,
    c_src: Condition,
    c_tar: Condition,
    w: float,
    cfg_mode: CfgMode = CfgMode.STANDARD,
    anchor: Literal["field", "cached"] = "field",
) -> float:
    """
    Maximum deviation of the guided target velocity from the source velocity along a
    source trajectory.

    anchor="field" compares against v(Z_i, t_i, c_src) at every state i = 0..N;
    anchor="cached" compares against the finite-difference source velocity that editing
    actually uses, at i = 1..N.
    """
    grid = src_traj.grid
    best = 0.0
    indices = range(grid.n_steps + 1) if anchor == "field" else range(1, grid.n_steps + 1)
    for i in indices:
        z = src_traj.states[i]
        guided = guided_velocity(field, z, grid.t(i), c_src, c_tar, w, cfg_mode)
        source = (
            field.eval(z, grid.t(i), c_src)
            if anchor == "field"
            else finite_diff_velocity(src_traj, i)
        )
        best = max(best, guided.distance(source))
    return best


@dataclass(frozen=True)
class Decomposition:
    """Editing and guidance deviation sums of one edit run."""

    v_delta_norm: float
    v_cfg_norm: float
    rhs: float
    lhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 1e-9

    def to_record(self) -> dict[str, Any]:
        return {
            "v_delta_norm": self.v_delta_norm,
            "v_cfg_norm": self.v_cfg_norm,
            "rhs": self.rhs,
            "lhs": self.lhs,
            "pass": self.holds,
        }


def decomposition_accumulate(
    report: EditReport, field: VelocityField, w: float | None = None
) -> Decomposition:
    """
    Split the final deviation into editing and guidance parts.

    V_delta = sum_i v(Z^tar_i, t_i, c_tar) - V^src_i and V_cfg = sum_i v(Z^tar_i, t_i, c_tar)
    - v(Z^tar_i, t_i, anchor), where the anchor is null for standard guidance and the source
    condition for source-anchored guidance. rhs = dt (||V_delta|| + |w - 1| ||V_cfg||).

    Raises:
        InvalidInputError: If the report has no per-step records.
    """
    if not report.steps:
        msg = "edit report has no per-step records"
        raise InvalidInputError(msg)
    scale = report.config.w if w is None else w
    grid = report.source.grid
    c_src = report.source.condition
    layout = report.edited.layout
    v_delta = LatentState.zeros(layout)
    v_cfg = LatentState.zeros(layout)
    for step in report.steps:
        z_tar = report.trajectory.states[step.i]
        conditional = field.eval(z_tar, grid.t(step.i), report.target)
        anchor = reference_velocity(field, z_tar, grid.t(step.i), c_src, report.config.cfg_mode)
        v_delta = v_delta + (conditional - finite_diff_velocity(report.source, step.i))
        v_cfg = v_cfg + (conditional - anchor)
    rhs = grid.dt * (v_delta.norm() + abs(scale - 1.0) * v_cfg.norm())
    lhs = report.edited.distance(report.source.start)
    return Decomposition(v_delta_norm=v_delta.norm(), v_cfg_norm=v_cfg.norm(), rhs=rhs, lhs=lhs)


@dataclass(frozen=True)
class TurnBound:
    """Per-turn drift against the finite-step editing bound."""

    turn: int
    drift: float
    delta_max: float
    lipschitz: float
    max_alpha: float
    bound: float
    exp_bound: float
    certified: bool

    @property
    def margin(self) -> float:
        return self.bound - self.drift

    @property
    def passed(self) -> bool:
        return self.drift <= self.bound + 1e-9

    def to_record(self) -> dict[str, Any]:
        return {
            "turn": self.turn,
            "drift": self.drift,
            "delta_max": self.delta_max,
            "L": self.lipschitz,
            "max_alpha": self.max_alpha,
            "bound": self.bound,
            "exp_bound": self.exp_bound,
            "margin": self.margin,
            "certified": self.certified,
            "pass": self.passed,
        }


def turn_bound_report(
    report: EditReport, field: VelocityField, lipschitz: float, turn: int = 1, certified: bool = True
) -> TurnBound:
    """
    Drift of one edit turn from its source endpoint against its bound.

    The bound uses the cached-anchor delta_max and the run's alpha profile, so it also holds
    when the source trajectory is itself an earlier edit.
    """
    delta = delta_max_hat(
        field,
        report.source,
        report.source.condition,
        report.target,
        report.config.w,
        report.config.cfg_mode,
        anchor="cached",
    )
    alphas = report.alphas
    bound = TurnBound(
        turn=turn,
        drift=report.edited.distance(report.source.start),
        delta_max=delta,
        lipschitz=lipschitz,
        max_alpha=max(alphas),
        bound=interpolation_bound(delta, lipschitz, alphas, report.source.grid.dt),
        exp_bound=editing_error_bound(delta, lipschitz, max(alphas)),
        certified=certified,
    )
    if not bound.passed:
        logger.warning("Turn drift exceeds its bound", extra=bound.to_record())
    return bound


@dataclass
class BoundsReport:
    """Estimated constants, analytic bounds and measured errors for one field."""

    field: dict[str, Any]
    lipschitz_hat: float
    curvature_hat: float
    delta_max_hat: float
    certified_lipschitz: float | None
    certified_curvature: float | None
    n_steps: int
    inversion_error_bound: float | None = None
    inversion_bound_exp: float | None = None
    editing_bounds: dict[str, float] = field(default_factory=dict)
    measured: dict[str, float] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)

    def to_record(self) -> dict[str, Any]:
        return {
            "field": self.field,
            "L_hat": self.lipschitz_hat,
            "M_hat": self.curvature_hat,
            "delta_max_hat": self.delta_max_hat,
            "L": self.certified_lipschitz,
            "M": self.certified_curvature,
            "n_steps": self.n_steps,
            "inversion_error_bound": self.inversion_error_bound,
            "inversion_bound_exp": self.inversion_bound_exp,
            "editing_bounds": self.editing_bounds,
            "measured": self.measured,
            "checks": self.checks,
        }


def build_bounds_report(
    vfield: VelocityField,
    src_traj: Trajectory,
    c_tar: Condition,
    w: float,
    cfg_mode: CfgMode = CfgMode.STANDARD,
    radius: float = 1.0,
    alphas: Sequence[float] = (0.1, 0.25, 0.5, 0.75, 0.9, 1.0),
    seed: int = 0,
    measured: dict[str, float] | None = None,
) -> BoundsReport:
    """
    Estimate L, M and delta_max around a source trajectory and tabulate the bounds.

    Certified constants are preferred for the bounds when the field has them; estimates
    are reported alongside and checked against the certificates.
    """
    c_src = src_traj.condition
    l_hat = estimate_lipschitz(vfield, c_src, src_traj.start, radius, seed=seed)
    m_hat = estimate_curvature(vfield, src_traj) if src_traj.n_steps >= MIN_CURVATURE_STEPS else 0.0
    d_hat = delta_max_hat(vfield, src_traj, c_src, c_tar, w, cfg_mode)
    lipschitz = vfield.lipschitz_bound if vfield.lipschitz_bound is not None else l_hat
    curvature = vfield.curvature_bound if vfield.curvature_bound is not None else m_hat

    report = BoundsReport(
        field=vfield.descriptor,
        lipschitz_hat=l_hat,
        curvature_hat=m_hat,
        delta_max_hat=d_hat,
        certified_lipschitz=vfield.lipschitz_bound,
        certified_curvature=vfield.curvature_bound,
        n_steps=src_traj.n_steps,
        measured=dict(measured or {}),
    )
    report.inversion_error_bound, report.inversion_bound_exp = inversion_error_bound(lipschitz, curvature, src_traj.n_steps)
    report.editing_bounds = {f"{a:g}": editing_error_bound(d_hat, lipschitz, a) for a in alphas}
    if vfield.lipschitz_bound is not None:
        report.checks["L_hat_within_certificate"] = l_hat <= vfield.lipschitz_bound + 1e-6
    if vfield.curvature_bound is not None:
        report.checks["M_hat_within_certificate"] = m_hat <= vfield.curvature_bound + 1e-6
    report.checks["inversion_finite_le_exp"] = report.inversion_error_bound <= report.inversion_bound_exp + 1e-12
    return report
