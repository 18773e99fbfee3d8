"""
Prometheus metrics for experiment runs.
"""

import time
from typing import TYPE_CHECKING

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

from flow_edit_lab.config import logger, settings
from flow_edit_lab.middleware.base import Handler, RunMiddleware

if TYPE_CHECKING:
    from flow_edit_lab.services.experiments import RunContext, RunOutcome

METRICS_FILE = "metrics.prom"

REGISTRY = CollectorRegistry()

RUN_COUNT = Counter(
    "flow_edit_lab_runs_total",
    "Total experiment runs",
    ["experiment", "status"],
    registry=REGISTRY,
)

RUN_DURATION = Histogram(
    "flow_edit_lab_run_duration_seconds",
    "Experiment run duration in seconds",
    ["experiment"],
    buckets=(0.01, 0.05, 0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0, 60.0, 120.0, 300.0),
    registry=REGISTRY,
)

RUNS_IN_PROGRESS = Gauge(
    "flow_edit_lab_runs_in_progress",
    "Experiment runs currently in progress",
    ["experiment"],
    registry=REGISTRY,
)

VELOCITY_EVALUATIONS = Counter(
    "flow_edit_lab_velocity_evaluations_total",
    "Velocity-field evaluations of the configured field",
    ["experiment"],
    registry=REGISTRY,
)


class MetricsMiddleware(RunMiddleware):
    """
    Collect Prometheus metrics for every run.

    Tracks:
    - Run count by experiment and status
    - Run duration
    - Runs in progress
    - Velocity evaluations (NFE)

    The registry is written to <output_dir>/metrics.prom after the run when
    settings.metrics_textfile is on, including for failed runs.
    """

    def dispatch(self, ctx: "RunContext", call_next: Handler) -> "RunOutcome":
        experiment = ctx.experiment.value
        start_time = time.perf_counter()
        RUNS_IN_PROGRESS.labels(experiment=experiment).inc()
        status = "failed"
        try:
            outcome = call_next(ctx)
            status = "succeeded"
            return outcome
        finally:
            RUNS_IN_PROGRESS.labels(experiment=experiment).dec()
            RUN_COUNT.labels(experiment=experiment, status=status).inc()
            RUN_DURATION.labels(experiment=experiment).observe(time.perf_counter() - start_time)
            VELOCITY_EVALUATIONS.labels(experiment=experiment).inc(ctx.nfe)
            if settings.metrics_textfile:
                ctx.output_dir.mkdir(parents=True, exist_ok=True)
                write_to_textfile(str(ctx.output_dir / METRICS_FILE), REGISTRY)
                ctx.artifacts.append(METRICS_FILE)
            logger.debug("Run metrics recorded", extra={"experiment": experiment, "status": status})
