"""
Middleware that assigns a run id for log correlation.
"""

import uuid
from typing import TYPE_CHECKING

from flow_edit_lab.config import current_run_id, logger
from flow_edit_lab.middleware.base import Handler, RunMiddleware

if TYPE_CHECKING:
    from flow_edit_lab.services.experiments import RunContext, RunOutcome


class RunIdMiddleware(RunMiddleware):
    """
    Generates a uuid4 run id (unless the context already has one) and exposes it to every
    log record emitted during the run.

    The id is stored on the context for the manifest; it never enters result.json.
    """

    def dispatch(self, ctx: "RunContext", call_next: Handler) -> "RunOutcome":
        if not ctx.run_id:
            ctx.run_id = str(uuid.uuid4())
        token = current_run_id.set(ctx.run_id)
        try:
            logger.info(
                "Run started",
                extra={"experiment": ctx.experiment.value, "output_dir": str(ctx.output_dir)},
            )
            return call_next(ctx)
        finally:
            current_run_id.reset(token)
