"""
Minimal middleware chain around experiment handlers.

A handler takes a RunContext and returns a RunOutcome; middleware wraps a handler and
decides what happens before and after it runs.
"""

from collections.abc import Callable
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from flow_edit_lab.services.experiments import RunContext, RunOutcome

Handler = Callable[["RunContext"], "RunOutcome"]


class RunMiddleware:
    """Base class: subclasses implement dispatch(ctx, call_next)."""

    def __init__(self, app: Handler) -> None:
        self.app = app

    def __call__(self, ctx: "RunContext") -> "RunOutcome":
        return self.dispatch(ctx, self.app)

    def dispatch(self, ctx: "RunContext", call_next: Handler) -> "RunOutcome":
        return call_next(ctx)
