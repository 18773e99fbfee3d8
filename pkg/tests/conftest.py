"""
Test fixtures for flow-edit-lab.
"""

import json
from pathlib import Path

import pytest

from flow_edit_lab.core.latent import Condition, LatentState
from flow_edit_lab.fields.analytic import ConstantField, LinearSkewField
from flow_edit_lab.fields.cfm import CfmModel, cfm_train, save_checkpoint
from flow_edit_lab.schemas.fields import DatasetSpec, TrainConfig
from flow_edit_lab.services.verification import analytic_zoo


# -- Analytic fields
@pytest.fixture
def rotation():
    """LinearSkew(omega=1) without label offsets."""
    return LinearSkewField(1.0)


@pytest.fixture
def two_label_rotation():
    """LinearSkew(omega=1) with offsets for labels 0 and 1."""
    return LinearSkewField(1.0, label_offsets=[[0.25, 0.25], [0.5, -0.5]])


@pytest.fixture
def constant_field():
    return ConstantField([1.0, 0.0])


@pytest.fixture
def zoo():
    """Every analytic field on two coordinates, with two-label offsets."""
    return analytic_zoo()


@pytest.fixture
def unit_x():
    return LatentState.from_flat([1.0, 0.0])


@pytest.fixture
def labels():
    return Condition.of_label(0), Condition.of_label(1)


# -- Trained two-component flow, shared by the slow tests
@pytest.fixture(scope="session")
def mixture():
    return DatasetSpec(means=[[3.0, 1.0], [3.0, -1.0]], std=0.3)


@pytest.fixture(scope="session")
def trained_model(mixture) -> CfmModel:
    """5k SGD steps on the two-component mixture (seed 0)."""
    return cfm_train(mixture, TrainConfig(steps=5000, seed=0))


@pytest.fixture(scope="session")
def trained_checkpoint(trained_model, tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("checkpoint") / "model.json"
    save_checkpoint(trained_model, path)
    return path


# -- Run configs
@pytest.fixture
def write_config(tmp_path):
    """Write a run-config document and return its path."""

    def _write(document: dict, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(document), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def rotation_field_spec():
    return {
        "kind": "linear_skew",
        "omega": 1.0,
        "label_offsets": [[0.25, 0.25], [0.5, -0.5]],
    }
