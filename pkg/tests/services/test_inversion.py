"""
Tests for forward inversion solvers, reconstruction and the reference integrator.
"""

import math

import pytest

from flow_edit_lab.core.latent import Condition, LatentState
from flow_edit_lab.core.trajectory import Direction
from flow_edit_lab.errors import InvalidParameterError, NonFiniteStateError, NumericalError
from flow_edit_lab.fields.analytic import LinearSkewField, TimeCurvedField
from flow_edit_lab.fields.base import CountingField
from flow_edit_lab.schemas.run import SolverConfig, SolverMethod
from flow_edit_lab.services.inversion import (
    expected_nfe,
    invert,
    invert_afp,
    invert_euler,
    invert_exact,
    invert_fixed_point,
    reconstruct,
    reference_solve,
    rk4_integrate,
    round_trip,
    solve_fixed_point_step,
)


@pytest.mark.unit
def test_euler_two_steps(rotation, unit_x):
    """Test explicit Euler on the rotation: (1, 0) -> (1, 0.5) -> (0.75, 1)."""
    traj = invert_euler(rotation, unit_x, SolverConfig.build(SolverMethod.EULER, 2))
    assert [s.to_list() for s in traj.states] == [[1.0, 0.0], [1.0, 0.5], [0.75, 1.0]]
    assert traj.direction is Direction.FORWARD


@pytest.mark.unit
def test_fixed_point_step(rotation, unit_x):
    """Test one refinement from the Euler velocity (0, 1) gives (-0.5, 1)."""
    velocity, residuals = solve_fixed_point_step(
        rotation, unit_x, 0.0, 0.5, LatentState.from_flat([0.0, 1.0]), 1
    )
    assert velocity.to_list() == [-0.5, 1.0]
    assert residuals == [pytest.approx(0.5)]


@pytest.mark.unit
def test_fixed_point_step_validation(rotation, unit_x):
    """Test that K < 1 and a non-positive step are rejected."""
    v = LatentState.from_flat([0.0, 1.0])
    with pytest.raises(InvalidParameterError):
        solve_fixed_point_step(rotation, unit_x, 0.0, 0.5, v, 0)
    with pytest.raises(InvalidParameterError):
        solve_fixed_point_step(rotation, unit_x, 0.5, 0.5, v, 1)


@pytest.mark.unit
def test_fixed_point_inversion(rotation, unit_x):
    """Test that K = 1 fixed-point inversion lands at (0.75, 0.5) after one of two steps."""
    residuals: list[list[float]] = []
    cfg = SolverConfig.build(SolverMethod.FIXED_POINT, 2, iterations=1)
    traj = invert_fixed_point(rotation, unit_x, cfg, residuals)
    assert traj.states[1].to_list() == [0.75, 0.5]
    assert len(residuals) == 2
    assert all(len(step) == 1 for step in residuals)


@pytest.mark.unit
def test_afp_inversion(rotation, unit_x):
    """Test that AFP reuses the previous velocity as its predictor after the first step."""
    traj = invert_afp(rotation, unit_x, SolverConfig.build(SolverMethod.AFP, 2, iterations=1))
    assert traj.states[1].to_list() == [0.75, 0.5]
    assert traj.end.to_list() == [0.25, 0.75]


@pytest.mark.unit
def test_midpoint_single_step(rotation, unit_x):
    """Test the midpoint rule: slope (0, 1), half-step velocity (-0.5, 1)."""
    traj = invert(rotation, unit_x, SolverConfig.build(SolverMethod.MIDPOINT, 1))
    assert traj.end.to_list() == [0.5, 1.0]
    assert traj.velocities[0].to_list() == [-0.5, 1.0]


@pytest.mark.unit
def test_solver_rejects_foreign_config(rotation, unit_x):
    """Test that a solver refuses a config for another method."""
    with pytest.raises(InvalidParameterError):
        invert_euler(rotation, unit_x, SolverConfig.build(SolverMethod.AFP, 2))


@pytest.mark.unit
@pytest.mark.parametrize(
    ("method", "n_steps", "iterations", "expected"),
    [
        (SolverMethod.EULER, 30, 1, 30),
        (SolverMethod.FIXED_POINT, 10, 3, 40),
        (SolverMethod.AFP, 30, 1, 31),
        (SolverMethod.AFP, 10, 4, 14),
        (SolverMethod.MIDPOINT, 12, 1, 24),
    ],
)
def test_evaluation_counts(two_label_rotation, unit_x, method, n_steps, iterations, expected):
    """Test that every solver spends exactly its documented number of evaluations."""
    counter = CountingField(two_label_rotation)
    cfg = SolverConfig.build(method, n_steps, Condition.of_label(0), iterations)
    invert(counter, unit_x, cfg)
    assert counter.count == expected == expected_nfe(method, n_steps, iterations)


@pytest.mark.unit
def test_reconstruct_two_steps(rotation):
    """Test backward Euler from (0.75, 1): (1.25, 0.625) then (1.5625, 0)."""
    report = reconstruct(
        rotation, LatentState.from_flat([0.75, 1.0]), Condition.null(), 2, LatentState.from_flat([1.0, 0.0])
    )
    assert report.trajectory.states[1].to_list() == [1.25, 0.625]
    assert report.z0_hat.to_list() == [1.5625, 0.0]
    assert report.error == pytest.approx(0.5625)
    assert report.nfe == 2


@pytest.mark.unit
def test_round_trip_record(rotation, unit_x):
    """Test the round-trip record for Euler with N = 2."""
    trip = round_trip(rotation, unit_x, SolverConfig.build(SolverMethod.EULER, 2))
    record = trip.to_record()
    assert record["z1"] == [0.75, 1.0]
    assert record["forward_nfe"] == 2
    assert record["backward_nfe"] == 2
    assert trip.error == pytest.approx(0.5625)


@pytest.mark.unit
def test_converged_fixed_point_is_exactly_invertible(rotation, unit_x):
    """Test that a converged implicit forward solve is undone by backward Euler."""
    cfg = SolverConfig.build(SolverMethod.FIXED_POINT, 10, iterations=40)
    assert round_trip(rotation, unit_x, cfg).error < 1e-10


@pytest.mark.unit
def test_afp_beats_euler(rotation, unit_x):
    """Test that AFP(K=1) reconstructs better than Euler at the same N."""
    euler = round_trip(rotation, unit_x, SolverConfig.build(SolverMethod.EULER, 10)).error
    afp = round_trip(rotation, unit_x, SolverConfig.build(SolverMethod.AFP, 10, iterations=1)).error
    assert afp < euler


@pytest.mark.unit
def test_euler_error_shrinks_with_steps(rotation, unit_x):
    """Test first-order convergence of the Euler round trip."""
    errors = [
        round_trip(rotation, unit_x, SolverConfig.build(SolverMethod.EULER, n)).error
        for n in (10, 20, 40)
    ]
    assert errors[0] > errors[1] > errors[2]
    assert errors[1] / errors[2] == pytest.approx(2.0, rel=0.15)


@pytest.mark.slow
def test_reference_solve_matches_rotation(rotation, unit_x):
    """Test that dense RK4 reproduces (cos 1, sin 1)."""
    endpoint = reference_solve(rotation, unit_x, Condition.null(), Direction.FORWARD, 10_000)
    assert endpoint.to_list() == pytest.approx([math.cos(1.0), math.sin(1.0)], abs=1e-8)


@pytest.mark.unit
def test_reference_solve_backward(rotation):
    """Test that the backward reference undoes the forward rotation."""
    start = LatentState.from_flat([math.cos(1.0), math.sin(1.0)])
    endpoint = reference_solve(rotation, start, Condition.null(), Direction.BACKWARD)
    assert endpoint.to_list() == pytest.approx([1.0, 0.0], abs=1e-8)


@pytest.mark.unit
def test_reference_solve_needs_dense_grid(rotation, unit_x):
    """Test that fewer than 1000 steps are rejected."""
    with pytest.raises(InvalidParameterError):
        reference_solve(rotation, unit_x, Condition.null(), Direction.FORWARD, 999)


@pytest.mark.unit
def test_non_finite_state_reports_step(unit_x):
    """Test that overflow surfaces as NonFiniteStateError with the failing step."""
    exploding = LinearSkewField(1e300)
    with pytest.raises(NonFiniteStateError) as exc_info:
        invert(exploding, unit_x, SolverConfig.build(SolverMethod.EULER, 4))
    assert exc_info.value.context["step"] == 1
    assert exc_info.value.exit_code == 3


def _rotation_endpoint_error(traj_end: LatentState) -> float:
    return math.dist(traj_end.to_list(), [math.cos(1.0), math.sin(1.0)])


@pytest.mark.unit
def test_midpoint_is_second_order(rotation, unit_x):
    """Test that doubling N cuts the midpoint endpoint error by about four."""
    errors = [
        _rotation_endpoint_error(invert(rotation, unit_x, SolverConfig.build(SolverMethod.MIDPOINT, n)).end)
        for n in (10, 20, 40)
    ]
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.1)
    assert errors[1] / errors[2] == pytest.approx(4.0, rel=0.1)


@pytest.mark.unit
def test_rk4_error_shrinks_by_at_least_eight(rotation, unit_x):
    """Test that every halving of the RK4 step cuts the endpoint error at least eightfold."""
    errors = [
        _rotation_endpoint_error(rk4_integrate(rotation, unit_x, Condition.null(), Direction.FORWARD, n))
        for n in (4, 8, 16, 32)
    ]
    for coarse, fine in zip(errors, errors[1:], strict=False):
        assert coarse >= 8.0 * fine


@pytest.mark.unit
def test_exact_inversion_two_steps(rotation, unit_x):
    """Test the implicit steps on the rotation: (1, 0) -> (0.8, 0.4) -> (0.48, 0.64)."""
    traj = invert_exact(rotation, unit_x, Condition.null(), 2)
    assert traj.states[1].to_list() == pytest.approx([0.8, 0.4])
    assert traj.end.to_list() == pytest.approx([0.48, 0.64])
    assert traj.direction is Direction.FORWARD
    assert traj.max_step_residual() < 1e-14


@pytest.mark.unit
@pytest.mark.parametrize("name", ["constant", "linear_skew", "contracting_spiral", "time_curved"])
def test_exact_latent_reconstructs_source(zoo, name):
    """Test that backward Euler from the exact latent returns the source."""
    z0 = LatentState.from_flat([1.0, -0.5])
    condition = Condition.of_label(0)
    traj = invert_exact(zoo[name], z0, condition, 10)
    assert reconstruct(zoo[name], traj.end, condition, 10, z0).error < 1e-12


@pytest.mark.unit
def test_exact_latent_is_the_fixed_point_limit(rotation, unit_x):
    """Test that fixed-point inversion with many iterations lands on the exact latent."""
    exact = invert_exact(rotation, unit_x, Condition.null(), 10)
    iterated = invert(rotation, unit_x, SolverConfig.build(SolverMethod.FIXED_POINT, 10, iterations=40))
    assert iterated.end.distance(exact.end) < 1e-12


@pytest.mark.unit
def test_exact_inversion_singular_step(unit_x):
    """Test that a singular implicit step is a numerical error with its step index."""
    field = TimeCurvedField(matrix=[[10.0, 0.0], [0.0, 0.0]], amplitude=0.0)
    with pytest.raises(NumericalError) as exc_info:
        invert_exact(field, unit_x, Condition.null(), 10)
    assert exc_info.value.context["step"] == 0
    assert exc_info.value.exit_code == 3
