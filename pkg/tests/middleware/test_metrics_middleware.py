"""
Tests for the Prometheus metrics middleware.
"""

import pytest

from flow_edit_lab.errors import InvalidInputError
from flow_edit_lab.middleware import metrics_middleware
from flow_edit_lab.middleware.metrics_middleware import METRICS_FILE, REGISTRY, MetricsMiddleware
from flow_edit_lab.schemas.run import RunConfig
from flow_edit_lab.services.experiments import RunContext, RunOutcome


def run_count(experiment: str, status: str) -> float:
    value = REGISTRY.get_sample_value(
        "flow_edit_lab_runs_total", {"experiment": experiment, "status": status}
    )
    return value or 0.0


@pytest.fixture
def ctx(tmp_path):
    return RunContext(config=RunConfig(experiment="bench"), output_dir=tmp_path / "out")


def succeed(ctx):
    return RunOutcome(result={"ok": True})


def fail(ctx):
    raise InvalidInputError("bad input")


@pytest.mark.unit
def test_successful_run_counted(ctx):
    """Test that middleware increments the succeeded counter and passes the outcome through."""
    before = run_count("bench", "succeeded")
    outcome = MetricsMiddleware(succeed)(ctx)
    assert outcome.result == {"ok": True}
    assert run_count("bench", "succeeded") == before + 1


@pytest.mark.unit
def test_failed_run_counted(ctx):
    """Test that middleware counts failures and re-raises them."""
    before = run_count("bench", "failed")
    with pytest.raises(InvalidInputError):
        MetricsMiddleware(fail)(ctx)
    assert run_count("bench", "failed") == before + 1


@pytest.mark.unit
def test_in_progress_gauge_returns_to_zero(ctx):
    """Test that the in-progress gauge is decremented after the run."""
    MetricsMiddleware(succeed)(ctx)
    assert REGISTRY.get_sample_value("flow_edit_lab_runs_in_progress", {"experiment": "bench"}) == 0.0


@pytest.mark.unit
def test_metrics_textfile_written(ctx):
    """Test that middleware writes metrics.prom and lists it as an artifact."""
    MetricsMiddleware(succeed)(ctx)
    path = ctx.output_dir / METRICS_FILE
    assert path.is_file()
    assert "flow_edit_lab_runs_total" in path.read_text(encoding="utf-8")
    assert ctx.artifacts == [METRICS_FILE]


@pytest.mark.unit
def test_metrics_textfile_written_on_failure(ctx):
    """Test that a failed run still leaves metrics.prom behind."""
    with pytest.raises(InvalidInputError):
        MetricsMiddleware(fail)(ctx)
    assert (ctx.output_dir / METRICS_FILE).is_file()


@pytest.mark.unit
def test_metrics_textfile_disabled(ctx, mocker):
    """Test that no file is written when the setting is off."""
    mocker.patch.object(metrics_middleware.settings, "metrics_textfile", False)
    MetricsMiddleware(succeed)(ctx)
    assert not (ctx.output_dir / METRICS_FILE).exists()
    assert ctx.artifacts == []
