"""
Trajectory JSON-lines record schemas.
"""

from typing import Any, Literal

from pydantic import BaseModel, Field


class TrajectoryHeader(BaseModel):
    """First line of a trajectory file."""

    n_steps: int = Field(..., ge=1, description="Number of uniform steps N")
    layout: dict[str, Any] = Field(..., description="Layout record {kind, shape}")
    condition: dict[str, Any] = Field(..., description="Condition record {kind, id?, vector?}")
    direction: Literal["forward", "backward"] = Field(..., description="Integration direction")

    model_config = {
        "json_schema_extra": {
            "example": {
                "n_steps": 2,
                "layout": {"kind": "flat", "shape": [2]},
                "condition": {"kind": "label", "id": 0},
                "direction": "forward",
            }
        }
    }


class TrajectoryLine(BaseModel):
    """One state line; velocity is null on the final line."""

    i: int = Field(..., ge=0, description="Step index")
    t: float = Field(..., ge=0.0, le=1.0, description="Time t_i = i / N")
    state: list[float] = Field(..., description="Row-major state values")
    velocity: list[float] | None = Field(None, description="Velocity linking t_i and t_{i+1}")
