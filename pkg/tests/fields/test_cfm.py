"""
Tests for the toy conditional flow-matching model.
"""

import numpy as np
import pytest

from flow_edit_lab.core.latent import Condition, LatentState
from flow_edit_lab.errors import InvalidInputError, InvalidParameterError, LayoutMismatchError
from flow_edit_lab.fields.cfm import (
    CfmPair,
    cfm_grad_check,
    cfm_loss,
    cfm_train,
    conditional_accuracy,
    init_model,
    load_checkpoint,
    sample_mixture,
    save_checkpoint,
)
from flow_edit_lab.fields.factory import make_field
from flow_edit_lab.schemas.fields import DatasetSpec, TrainConfig, TrainedFieldSpec


def small_batch(n: int, seed: int = 0) -> tuple[list[CfmPair], list[float]]:
    rng = np.random.default_rng(seed)
    batch = [
        CfmPair(
            LatentState.from_flat(rng.standard_normal(2)),
            LatentState.from_flat(rng.standard_normal(2)),
            Condition.of_label(i % 2) if i % 3 else Condition.null(),
        )
        for i in range(n)
    ]
    return batch, rng.uniform(0.0, 1.0, n).tolist()


@pytest.mark.unit
def test_linear_model_parameter_count(mixture):
    """Test the parameter count of a model without hidden layers."""
    model = init_model(mixture, TrainConfig(hidden_layers=0, embedding_dim=4))
    # embedding 3 x 4 plus a 7 -> 2 linear layer
    assert model.parameter_count == 12 + 7 * 2 + 2


@pytest.mark.unit
def test_initialization_is_seeded(mixture):
    """Test that the same seed gives the same parameters."""
    a = init_model(mixture, TrainConfig(seed=3))
    b = init_model(mixture, TrainConfig(seed=3))
    c = init_model(mixture, TrainConfig(seed=4))
    np.testing.assert_array_equal(a.parameter_vector(), b.parameter_vector())
    assert not np.array_equal(a.parameter_vector(), c.parameter_vector())


@pytest.mark.unit
def test_loss_of_zero_model(mixture):
    """Test that a zero network predicts 0 and scores ||Z_1 - Z_0||^2."""
    model = init_model(mixture, TrainConfig(hidden_layers=0))
    model.load_parameter_vector(np.zeros(model.parameter_count))
    pair = CfmPair(LatentState.from_flat([0.0, 0.0]), LatentState.from_flat([1.0, 1.0]), Condition.null())
    assert cfm_loss(model, [pair], [0.5]) == pytest.approx(2.0)


@pytest.mark.unit
def test_loss_validation(mixture):
    """Test empty batches, mismatched layouts and out-of-range times."""
    model = init_model(mixture, TrainConfig(hidden_layers=0))
    with pytest.raises(InvalidInputError):
        cfm_loss(model, [], [])
    mixed = CfmPair(LatentState.from_flat([0.0, 0.0]), LatentState.from_flat([1.0]), Condition.null())
    with pytest.raises(LayoutMismatchError):
        cfm_loss(model, [mixed], [0.5])
    batch, _ = small_batch(1)
    with pytest.raises(InvalidParameterError):
        cfm_loss(model, batch, [1.5])


@pytest.mark.unit
def test_unknown_label_rejected(mixture):
    """Test that labels outside the mixture raise."""
    model = init_model(mixture, TrainConfig())
    with pytest.raises(InvalidParameterError):
        model.velocity(np.zeros(2), 0.5, Condition.of_label(5))


@pytest.mark.unit
def test_grad_check_linear_model(mixture):
    """Test autograd against central differences on a model without hidden layers."""
    model = init_model(mixture, TrainConfig(hidden_layers=0))
    batch, times = small_batch(4)
    assert cfm_grad_check(model, batch, times) < 1e-6


@pytest.mark.unit
def test_grad_check_fresh_model(mixture):
    """Test autograd against central differences on the default architecture."""
    model = init_model(mixture, TrainConfig())
    batch, times = small_batch(8)
    assert cfm_grad_check(model, batch, times, n_params=50) < 1e-4


@pytest.mark.unit
def test_grad_check_restores_parameters(mixture):
    """Test that parameters are bit-exact after the perturbations."""
    model = init_model(mixture, TrainConfig())
    before = model.parameter_vector()
    batch, times = small_batch(3)
    cfm_grad_check(model, batch, times, n_params=20)
    np.testing.assert_array_equal(model.parameter_vector(), before)


@pytest.mark.unit
def test_grad_check_batch_limits(mixture):
    """Test that batches above eight items or empty batches are rejected."""
    model = init_model(mixture, TrainConfig())
    batch, times = small_batch(9)
    with pytest.raises(InvalidParameterError):
        cfm_grad_check(model, batch, times)
    with pytest.raises(InvalidInputError):
        cfm_grad_check(model, [], [])


@pytest.mark.unit
def test_sample_mixture_labels(mixture):
    """Test that samples cluster around the mean of their label."""
    points, labels = sample_mixture(mixture, 400, np.random.default_rng(0))
    means = np.asarray(mixture.means)
    assert points.shape == (400, 2)
    assert set(labels.tolist()) == {0, 1}
    assert np.all(np.linalg.norm(points - means[labels], axis=1) < 2.0)


@pytest.mark.unit
def test_short_training_records_history(mixture):
    """Test that history holds step 0 and every log point."""
    model = cfm_train(mixture, TrainConfig(steps=20, log_every=10, batch_size=16))
    assert [entry["step"] for entry in model.history] == [0, 10, 20]
    assert all(np.isfinite(entry["heldout_loss"]) for entry in model.history)


@pytest.mark.unit
def test_checkpoint_round_trip(tmp_path, mixture):
    """Test that a reloaded checkpoint reproduces parameters and velocities exactly."""
    model = cfm_train(mixture, TrainConfig(steps=5, batch_size=8))
    path = tmp_path / "model.json"
    save_checkpoint(model, path)
    loaded = make_field(TrainedFieldSpec(checkpoint=str(path)))

    np.testing.assert_array_equal(loaded.parameter_vector(), model.parameter_vector())
    z = np.array([2.5, 0.5])
    np.testing.assert_array_equal(
        loaded.velocity(z, 0.3, Condition.of_label(1)), model.velocity(z, 0.3, Condition.of_label(1))
    )
    assert loaded.history == model.history


@pytest.mark.unit
def test_load_checkpoint_errors(tmp_path):
    """Test missing files and foreign documents."""
    with pytest.raises(InvalidInputError):
        load_checkpoint(tmp_path / "missing.json")
    other = tmp_path / "other.json"
    other.write_text('{"format": "something-else"}', encoding="utf-8")
    with pytest.raises(InvalidInputError):
        load_checkpoint(other)


@pytest.mark.slow
def test_training_reduces_heldout_loss(trained_model):
    """Test that 5k SGD steps at least halve the held-out loss."""
    initial = trained_model.history[0]["heldout_loss"]
    final = trained_model.history[-1]["heldout_loss"]
    assert final / initial < 0.5


@pytest.mark.slow
def test_trained_model_follows_its_label(trained_model):
    """Test that guided samples land on their own component at least 90% of the time."""
    accuracy = conditional_accuracy(trained_model, n_samples=500, n_steps=30, w=1.0, seed=0)
    assert min(accuracy.values()) >= 0.9


@pytest.mark.unit
def test_mixture_defaults():
    """Test the default data-side mixture."""
    dataset = DatasetSpec()
    assert dataset.means == [[3.0, 1.0], [3.0, -1.0]]
    assert dataset.std == 0.3
    assert dataset.dim == 2
    assert dataset.n_labels == 2


@pytest.mark.unit
def test_training_is_reproducible(mixture):
    """Test that two runs with the same seed give bit-identical parameters."""
    config = TrainConfig(steps=30, batch_size=16, log_every=10, seed=5)
    a = cfm_train(mixture, config)
    b = cfm_train(mixture, config)
    np.testing.assert_array_equal(a.parameter_vector(), b.parameter_vector())
    assert a.history == b.history


@pytest.mark.unit
def test_zero_steps_returns_initial_parameters(mixture):
    """Test that training for zero steps leaves the seeded initialization untouched."""
    config = TrainConfig(steps=0, seed=2)
    trained = cfm_train(mixture, config)
    initial = init_model(mixture, config)
    np.testing.assert_array_equal(trained.parameter_vector(), initial.parameter_vector())
    assert [entry["step"] for entry in trained.history] == [0]
