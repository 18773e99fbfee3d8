"""
Tests for the interpolation scheduler, gated edit velocities and backward editing.
"""

import numpy as np
import pytest

from flow_edit_lab.core.latent import Condition, LatentState
from flow_edit_lab.errors import InvalidParameterError, LayoutMismatchError, NonFiniteStateError
from flow_edit_lab.fields.analytic import ConstantField, LinearSkewField
from flow_edit_lab.schemas.run import (
    AlphaScheduler,
    EditConfig,
    MaskConfig,
    SolverConfig,
    SolverMethod,
)
from flow_edit_lab.services.editing import (
    EditTurn,
    alpha_from_cosine,
    alpha_schedule,
    backward_edit,
    edit_velocity,
    multi_turn_edit,
    single_turn_edits,
)
from flow_edit_lab.services.inversion import invert
from flow_edit_lab.services.masking import Mask


@pytest.mark.unit
@pytest.mark.parametrize(
    ("v_src", "v_tar", "t_next", "gamma", "expected"),
    [
        ([1.0, 0.0], [2.0, 0.0], 0.5, 2.0, 0.75),
        ([1.0, 0.0], [-1.0, 0.0], 0.5, 2.0, 0.0),
        ([1.0, 0.0], [1.0, 0.0], 1.0, 5.5, 0.0),
    ],
)
def test_alpha_schedule_examples(v_src, v_tar, t_next, gamma, expected):
    """Test alpha = max(cos, 0) * (1 - t^gamma) on aligned, opposed and final steps."""
    alpha = alpha_schedule(
        LatentState.from_flat(v_src), LatentState.from_flat(v_tar), t_next, gamma
    )
    assert alpha == pytest.approx(expected)


@pytest.mark.unit
def test_alpha_rises_toward_data():
    """Test that alpha is non-increasing in t for a fixed cosine."""
    alphas = [alpha_from_cosine(0.8, t, 4.5) for t in np.linspace(0.0, 1.0, 11)]
    assert alphas[0] == pytest.approx(0.8)
    assert alphas[-1] == 0.0
    assert all(a >= b for a, b in zip(alphas, alphas[1:], strict=False))


@pytest.mark.unit
@pytest.mark.parametrize("cosine", [0.0, 0.3, 0.8, 1.0])
def test_unclamped_alpha_keeps_positive_cosines(cosine):
    """Test that without the floor a non-negative cosine gives cos * (1 - t^gamma) unchanged."""
    expected = cosine * (1.0 - 0.5**2.0)
    assert alpha_from_cosine(cosine, 0.5, 2.0, clamp=False) == pytest.approx(expected)
    assert alpha_from_cosine(cosine, 0.5, 2.0, clamp=False) == alpha_from_cosine(cosine, 0.5, 2.0)


@pytest.mark.unit
def test_unclamped_alpha_is_clipped_to_unit_range():
    """Test that a negative cosine still yields alpha in [0, 1] when the floor is off."""
    assert alpha_from_cosine(-0.5, 0.0, 2.0, clamp=False) == 0.0
    assert alpha_from_cosine(-0.5, 0.0, 2.0, scheduler=AlphaScheduler.COSINE, clamp=False) == 0.0
    assert alpha_from_cosine(-0.5, 0.0, 2.0, clamp=True) == 0.0


@pytest.mark.unit
def test_scheduler_variants():
    """Test that decay ignores the cosine and cosine ignores the time."""
    assert alpha_from_cosine(0.2, 0.5, 1.0, scheduler=AlphaScheduler.DECAY) == pytest.approx(0.5)
    assert alpha_from_cosine(0.2, 0.5, 1.0, scheduler=AlphaScheduler.COSINE) == pytest.approx(0.2)
    assert alpha_from_cosine(0.2, 0.5, 1.0) == pytest.approx(0.1)


@pytest.mark.unit
def test_alpha_time_range():
    """Test that t outside [0, 1] raises."""
    with pytest.raises(InvalidParameterError):
        alpha_from_cosine(1.0, 1.5, 2.0)


@pytest.mark.unit
def test_edit_velocity_blend():
    """Test V_src + alpha (V_tar - V_src) with alpha = 0.5."""
    v_src = LatentState.from_flat([0.0, 2.0])
    v_tar = LatentState.from_flat([2.0, 2.0])
    assert edit_velocity(v_src, v_tar, 0.5).to_list() == [1.0, 2.0]


@pytest.mark.unit
def test_edit_velocity_limits_are_exact():
    """Test that alpha = 0 returns V_src and alpha = 1 returns V_tar bit for bit."""
    v_src = LatentState.from_flat([0.1, 0.7])
    v_tar = LatentState.from_flat([0.3, -0.9])
    assert edit_velocity(v_src, v_tar, 0.0) == v_src
    assert edit_velocity(v_src, v_tar, 1.0) == v_tar


@pytest.mark.unit
def test_edit_velocity_mask_gates_sites():
    """Test that a mask of (1, 0) edits only the first site."""
    v_src = LatentState.from_grid(np.zeros((1, 2, 2)))
    v_tar = LatentState.from_grid(np.ones((1, 2, 2)))
    edited = edit_velocity(v_src, v_tar, 1.0, Mask(np.array([[1.0, 0.0]])))
    assert edited.to_list() == [1.0, 1.0, 0.0, 0.0]


@pytest.mark.unit
def test_all_ones_mask_is_no_mask():
    """Test that an all-ones mask gives the unmasked result."""
    v_src = LatentState.from_grid(np.zeros((2, 2, 1)))
    v_tar = LatentState.from_grid(np.arange(4.0).reshape(2, 2, 1))
    ones = Mask.full(2, 2, 1.0)
    assert edit_velocity(v_src, v_tar, 0.3, ones) == edit_velocity(v_src, v_tar, 0.3)


@pytest.mark.unit
def test_mask_needs_matching_grid():
    """Test that masks on flat states or wrong grids raise."""
    flat = LatentState.from_flat([0.0, 1.0])
    with pytest.raises(LayoutMismatchError):
        edit_velocity(flat, flat, 0.5, Mask.full(1, 2, 1.0))
    grid = LatentState.from_grid(np.zeros((2, 2, 1)))
    with pytest.raises(LayoutMismatchError):
        edit_velocity(grid, grid, 0.5, Mask.full(3, 3, 1.0))


@pytest.fixture
def offset_field():
    return ConstantField([0.0, 0.0], label_offsets=[[1.0, 0.0], [0.0, 1.0]])


@pytest.fixture
def offset_source(offset_field):
    solver = SolverConfig.build(SolverMethod.EULER, 4, Condition.of_label(0))
    return invert(offset_field, LatentState.from_flat([0.0, 0.0]), solver)


@pytest.mark.unit
def test_zero_alpha_edit_replays_source(offset_field, offset_source):
    """Test that alpha = 0 reconstructs the source within round-off."""
    report = backward_edit(
        offset_field, offset_source, Condition.of_label(1), EditConfig(n_steps=4, alpha_override=0.0)
    )
    assert report.edited.distance(offset_source.start) <= 1e-12


@pytest.mark.unit
def test_edit_costs_two_evaluations_per_step(offset_field, offset_source):
    """Test NFE = 2N and backward-ordered step records."""
    report = backward_edit(offset_field, offset_source, Condition.of_label(1), EditConfig(n_steps=4))
    assert report.nfe == 8
    assert [step.i for step in report.steps] == [4, 3, 2, 1]
    assert report.trajectory.end == offset_source.end
    assert report.steps[-1].t == 0.25


@pytest.mark.unit
def test_full_alpha_edit_follows_target(offset_field, offset_source):
    """Test that alpha = 1 at w = 1 integrates the target velocity (0, 1) from (1, 0)."""
    config = EditConfig(n_steps=4, w=1.0, alpha_override=1.0)
    report = backward_edit(offset_field, offset_source, Condition.of_label(1), config)
    assert report.edited.to_list() == pytest.approx([1.0, -1.0])
    assert report.alphas == [1.0] * 4


@pytest.mark.unit
def test_orthogonal_target_is_never_blended(offset_field, offset_source):
    """Test that the cosine scheduler gives alpha = 0 when velocities are orthogonal."""
    config = EditConfig(n_steps=4, w=1.0)
    report = backward_edit(offset_field, offset_source, Condition.of_label(1), config)
    assert all(step.cosine == pytest.approx(0.0, abs=1e-12) for step in report.steps)
    assert report.edited.distance(offset_source.start) <= 1e-12


@pytest.mark.unit
def test_step_count_mismatch(offset_field, offset_source):
    """Test that the edit and source trajectories must agree on N."""
    with pytest.raises(InvalidParameterError):
        backward_edit(offset_field, offset_source, Condition.of_label(1), EditConfig(n_steps=5))


@pytest.mark.unit
def test_backward_source_trajectory_is_accepted(offset_field, offset_source):
    """Test that a previous edit (a backward trajectory) can serve as a source."""
    first = backward_edit(
        offset_field, offset_source, Condition.of_label(1), EditConfig(n_steps=4, alpha_override=1.0, w=1.0)
    )
    second = backward_edit(
        offset_field, first.trajectory, Condition.of_label(0), EditConfig(n_steps=4, alpha_override=0.0)
    )
    assert second.edited.distance(first.edited) <= 1e-12


@pytest.mark.unit
def test_masked_grid_edit_records_mask_means():
    """Test that a masked grid edit records a mask mean in [0, 1] at every step."""
    size = 2 * 2 * 2
    field = LinearSkewField(1.0, label_offsets=[np.full(size, 0.25).tolist(), np.linspace(0.5, -0.5, size).tolist()])
    z0 = LatentState.from_grid(np.linspace(-1.0, 1.0, size).reshape(2, 2, 2))
    source = invert(field, z0, SolverConfig.build(SolverMethod.AFP, 6, Condition.of_label(0)))
    config = EditConfig(n_steps=6, w=2.0, mask=MaskConfig(k=3))
    report = backward_edit(field, source, Condition.of_label(1), config)
    assert report.nfe == 12
    assert all(step.mask_mean is not None and 0.0 <= step.mask_mean <= 1.0 for step in report.steps)


@pytest.mark.unit
def test_multi_turn_identity_turns(two_label_rotation, unit_x, labels):
    """Test that three alpha = 0 turns leave the source unchanged."""
    label0, label1 = labels
    turns = [EditTurn(target=label1, alpha_override=0.0) for _ in range(3)]
    reports = multi_turn_edit(two_label_rotation, unit_x, label0, turns, EditConfig(n_steps=10))
    assert len(reports) == 3
    for report in reports:
        assert report.edited.distance(unit_x) <= 1e-9


@pytest.mark.unit
def test_multi_turn_chains_sources(two_label_rotation, unit_x, labels):
    """Test that each turn starts from the previous turn's trajectory."""
    label0, label1 = labels
    turns = [EditTurn(target=label1, gamma=4.5), EditTurn(target=label0, gamma=2.0)]
    reports = multi_turn_edit(two_label_rotation, unit_x, label0, turns, EditConfig(n_steps=10, w=2.0))
    assert reports[1].source is reports[0].trajectory
    assert reports[1].config.gamma == 2.0


@pytest.mark.unit
def test_single_turn_edits_share_the_source(two_label_rotation, unit_x, labels):
    """Test that single-turn edits all replay the original inversion."""
    label0, label1 = labels
    turns = [EditTurn(target=label1, alpha_override=0.5), EditTurn(target=label0, alpha_override=0.5)]
    config = EditConfig(n_steps=10, w=2.0)
    chained = multi_turn_edit(two_label_rotation, unit_x, label0, turns, config)
    singles = single_turn_edits(two_label_rotation, chained[0].source, turns, config)
    assert all(report.source is chained[0].source for report in singles)
    assert singles[0].edited == chained[0].edited
    assert singles[1].edited.distance(chained[1].edited) > 1e-6


@pytest.mark.unit
def test_multi_turn_needs_turns(two_label_rotation, unit_x, labels):
    """Test that an empty turn list raises."""
    with pytest.raises(InvalidParameterError):
        multi_turn_edit(two_label_rotation, unit_x, labels[0], [], EditConfig())


@pytest.mark.unit
def test_multi_turn_failure_names_the_turn(unit_x):
    """Test that a numerical failure inside a turn carries the turn index."""
    field = LinearSkewField(1e200, label_offsets=[[0.0, 0.0], [1e200, 1e200]])
    turns = [EditTurn(target=Condition.of_label(1), alpha_override=1.0)]
    with pytest.raises(NonFiniteStateError) as exc_info:
        multi_turn_edit(field, LatentState.from_flat([0.0, 0.0]), Condition.of_label(0), turns, EditConfig(n_steps=4, w=1e200))
    assert exc_info.value.context["turn"] == 1


@pytest.mark.slow
def test_trained_edit_moves_toward_the_target_component(trained_model):
    """Test that editing toward label 1 nears that component and deviates less than alpha = 1."""
    z0 = LatentState.from_flat([3.0, 1.0])
    target_mean = LatentState.from_flat([3.0, -1.0])
    solver = SolverConfig.build(SolverMethod.AFP, 20, Condition.of_label(0))
    source = invert(trained_model, z0, solver)
    config = EditConfig(n_steps=20, w=1.0, gamma=5.5)
    label = Condition.of_label(1)

    edited = backward_edit(trained_model, source, label, config).edited
    replay = backward_edit(
        trained_model, source, label, config.model_copy(update={"alpha_override": 0.0})
    ).edited
    uncontrolled = backward_edit(
        trained_model, source, label, config.model_copy(update={"alpha_override": 1.0})
    ).edited

    assert edited.distance(target_mean) < replay.distance(target_mean)
    assert edited.distance(z0) < uncontrolled.distance(z0)
