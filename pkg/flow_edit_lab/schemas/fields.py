"""
Velocity-field, dataset and training schemas.
"""

from typing import Annotated, Literal

from pydantic import BaseModel, Field, field_validator, model_validator


class _AnalyticSpec(BaseModel):
    """Parameters shared by every analytic field."""

    label_offsets: list[list[float]] = Field(
        default_factory=list,
        description="Per-label offset vectors b_k; label k evaluates drift + b_k, null evaluates drift",
    )
    radius: float = Field(
        4.0, gt=0.0, description="State-space radius R over which the curvature bound is certified"
    )

    model_config = {"extra": "forbid"}


class ConstantFieldSpec(_AnalyticSpec):
    """v(z, t) = c."""

    kind: Literal["constant"] = "constant"
    velocity: list[float] = Field(..., min_length=1, description="Constant velocity c")

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {"example": {"kind": "constant", "velocity": [1.0, 0.0]}},
    }


class LinearSkewFieldSpec(_AnalyticSpec):
    """Rotation at rate omega on consecutive coordinate pairs."""

    kind: Literal["linear_skew"] = "linear_skew"
    omega: float = Field(..., allow_inf_nan=False, description="Rotation rate")

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "example": {"kind": "linear_skew", "omega": 1.0, "label_offsets": [[0.5, 0.0]]}
        },
    }


class ContractingSpiralFieldSpec(_AnalyticSpec):
    """v = (-rate * I + omega * J) z."""

    kind: Literal["contracting_spiral"] = "contracting_spiral"
    rate: float = Field(..., ge=0.0, allow_inf_nan=False, description="Contraction rate")
    omega: float = Field(..., allow_inf_nan=False, description="Rotation rate")

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {"example": {"kind": "contracting_spiral", "rate": 0.5, "omega": 1.0}},
    }


class TimeCurvedFieldSpec(_AnalyticSpec):
    """v = A z + amplitude * sin(2 pi frequency t) * u with u the normalized ones vector."""

    kind: Literal["time_curved"] = "time_curved"
    matrix: list[list[float]] | None = Field(
        None, description="Explicit square matrix A; overrides skew_rate"
    )
    skew_rate: float = Field(0.5, allow_inf_nan=False, description="A = skew_rate * J when no matrix")
    amplitude: float = Field(1.0, allow_inf_nan=False, description="Forcing amplitude a")
    frequency: float = Field(0.25, allow_inf_nan=False, description="Forcing frequency f")

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "example": {"kind": "time_curved", "skew_rate": 0.5, "amplitude": 1.0, "frequency": 0.25}
        },
    }

    @field_validator("matrix")
    @classmethod
    def _square(cls, value: list[list[float]] | None) -> list[list[float]] | None:
        if value is not None and any(len(row) != len(value) for row in value):
            msg = "matrix must be square"
            raise ValueError(msg)
        return value


class TrainedFieldSpec(BaseModel):
    """A CFM model loaded from a checkpoint file."""

    kind: Literal["trained"] = "trained"
    checkpoint: str = Field(..., description="Path to a checkpoint written by the train experiment")

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {"example": {"kind": "trained", "checkpoint": "runs/train/model.json"}},
    }


FieldSpec = Annotated[
    ConstantFieldSpec
    | LinearSkewFieldSpec
    | ContractingSpiralFieldSpec
    | TimeCurvedFieldSpec
    | TrainedFieldSpec,
    Field(discriminator="kind"),
]


class DatasetSpec(BaseModel):
    """Labeled Gaussian mixture for the data side; the noise side is standard normal."""

    means: list[list[float]] = Field(
        default_factory=lambda: [[3.0, 1.0], [3.0, -1.0]],
        min_length=1,
        description="Component means; component k carries label k",
    )
    std: float = Field(0.3, gt=0.0, description="Isotropic standard deviation of every component")
    weights: list[float] | None = Field(None, description="Mixture weights (uniform when omitted)")
    n_heldout: int = Field(2048, ge=1, description="Held-out pairs used to score training")

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {"example": {"means": [[3.0, 1.0], [3.0, -1.0]], "std": 0.3}},
    }

    @model_validator(mode="after")
    def _consistent(self) -> "DatasetSpec":
        dims = {len(mean) for mean in self.means}
        if len(dims) != 1 or 0 in dims:
            msg = "all component means need the same non-zero dimension"
            raise ValueError(msg)
        if self.weights is not None:
            if len(self.weights) != len(self.means) or any(w < 0 for w in self.weights):
                msg = "weights must be non-negative, one per component"
                raise ValueError(msg)
            if sum(self.weights) <= 0:
                msg = "weights must not all be zero"
                raise ValueError(msg)
        return self

    @property
    def dim(self) -> int:
        return len(self.means[0])

    @property
    def n_labels(self) -> int:
        return len(self.means)


class TrainConfig(BaseModel):
    """Model architecture and SGD hyperparameters."""

    steps: int = Field(5000, ge=0, description="SGD steps")
    batch_size: int = Field(256, ge=1, description="Pairs per step")
    learning_rate: float = Field(0.02, gt=0.0, description="Fixed SGD step size")
    seed: int = Field(0, description="Seed for initialization and data sampling")
    hidden_width: int = Field(64, ge=1, description="Hidden units per layer")
    hidden_layers: int = Field(2, ge=0, description="Hidden layers; 0 gives a linear model")
    embedding_dim: int = Field(4, ge=1, description="Condition embedding width")
    p_uncond: float = Field(
        0.2, ge=0.0, le=1.0, description="Probability of replacing a label with the null row"
    )
    log_every: int = Field(500, ge=1, description="Held-out loss is recorded every log_every steps")
    eval_samples: int = Field(
        500, ge=0, description="Guided samples per label for the conditional-accuracy check (0 skips)"
    )

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {"example": {"steps": 5000, "batch_size": 256, "learning_rate": 0.02}},
    }
