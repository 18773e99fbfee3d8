"""
Domain errors for flow-edit-lab.

Every error carries a context dict (step index, turn index, shapes, ...) and the process exit
code the CLI uses when the error escapes a run.
"""

from collections.abc import Iterator
from contextlib import contextmanager
from typing import Any

from flow_edit_lab.config import logger


class FlowLabError(Exception):
    """Base class for all flow-edit-lab errors."""

    exit_code = 1

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message)
        self.message = message
        self.context = context

    def with_context(self, **context: Any) -> "FlowLabError":
        """Attach extra context (e.g. the turn index) and return self for re-raising."""
        self.context.update(context)
        return self

    def to_record(self) -> dict[str, Any]:
        """Machine-readable error record written to error.json."""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "context": self.context,
        }

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value}" for key, value in sorted(self.context.items()))
        return f"{self.message} ({details})"


class InvalidInputError(FlowLabError, ValueError):
    """Inputs violate a documented precondition."""

    exit_code = 2


class InvalidConfigError(InvalidInputError):
    """Run config failed to parse or validate."""


class LayoutMismatchError(InvalidInputError):
    """Two states (or a state and a mask) do not share a layout."""


class StepIndexError(InvalidInputError):
    """A trajectory step index is out of range."""


class EmptyStateError(InvalidInputError):
    """An operation needs at least one value."""


class InvalidParameterError(InvalidInputError):
    """A scalar parameter is outside its documented range."""


class NumericalError(FlowLabError, ArithmeticError):
    """A computation produced an unusable number."""

    exit_code = 3


class NonFiniteStateError(NumericalError):
    """A state or velocity contains NaN or Inf."""


@contextmanager
def step_context(**context: Any) -> Iterator[None]:
    """Attach step/turn indices to numerical errors raised inside the block."""
    try:
        yield
    except NumericalError as exc:
        exc.with_context(**context)
        logger.warning("Numerical failure", extra={"error": exc.message, "context": exc.context})
        raise
