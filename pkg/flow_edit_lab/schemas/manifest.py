"""
Run manifest schema.
"""

from enum import Enum
from typing import Any

from pydantic import BaseModel, Field


class RunStatus(str, Enum):
    """Final state of a run."""

    SUCCEEDED = "succeeded"
    FAILED = "failed"


class ErrorRecord(BaseModel):
    """Machine-readable failure, also written to error.json."""

    error: str = Field(..., description="Exception class name")
    message: str = Field(..., description="Human-readable message")
    exit_code: int = Field(..., description="Process exit code")
    context: dict[str, Any] = Field(default_factory=dict, description="Step, turn and shape context")

    model_config = {
        "json_schema_extra": {
            "example": {
                "error": "NonFiniteStateError",
                "message": "latent state contains non-finite values",
                "exit_code": 3,
                "context": {"step": 7},
            }
        }
    }


class RunManifest(BaseModel):
    """
    Everything about a run that is not a result: identity, timing and the config echo.

    Timestamps and the run id live here only, so result.json stays byte-identical across
    reruns of the same config.
    """

    run_id: str = Field(..., description="uuid4 assigned to the run")
    experiment: str = Field(..., description="Experiment kind")
    status: RunStatus = Field(..., description="Final status")
    version: str = Field(..., description="flow-edit-lab version")
    seed: int = Field(..., description="Run seed")
    started_at: str = Field(..., description="UTC start time, ISO 8601")
    finished_at: str = Field(..., description="UTC end time, ISO 8601")
    duration_seconds: float = Field(..., description="Wall-clock duration")
    nfe: int = Field(0, description="Velocity evaluations performed by the run")
    config: dict[str, Any] = Field(..., description="Validated run config")
    artifacts: list[str] = Field(default_factory=list, description="Files written, relative to the output dir")
    error: ErrorRecord | None = Field(None, description="Failure record when status is failed")

    model_config = {
        "json_schema_extra": {
            "example": {
                "run_id": "0b6f3c1e-8f0e-4d4e-9f57-0c2f5b7a9d11",
                "experiment": "bench",
                "status": "succeeded",
                "version": "0.1.0",
                "seed": 0,
                "started_at": "2025-01-01T00:00:00+00:00",
                "finished_at": "2025-01-01T00:00:02+00:00",
                "duration_seconds": 2.1,
                "nfe": 5120,
                "config": {"experiment": "bench"},
                "artifacts": ["result.json", "bench.csv"],
            }
        }
    }
