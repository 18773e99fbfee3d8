"""
Run-config schemas.

A run is fully described by one JSON document validated against RunConfig; nothing that
changes results is read from the environment.
"""

from enum import Enum
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from flow_edit_lab.core.latent import Condition, LatentState, Layout
from flow_edit_lab.schemas.fields import DatasetSpec, FieldSpec, TrainConfig


class ConditionSpec(BaseModel):
    """Condition record {kind, id?, vector?}."""

    kind: Literal["null", "label", "embedding"] = Field("null", description="Condition family")
    id: int | None = Field(None, ge=0, description="Label id for kind=label")
    vector: list[float] | None = Field(None, description="Embedding vector for kind=embedding")

    model_config = {"extra": "forbid", "json_schema_extra": {"example": {"kind": "label", "id": 1}}}

    def to_condition(self) -> Condition:
        return Condition.from_record(self.model_dump(exclude_none=True))

    @classmethod
    def from_condition(cls, condition: Condition) -> "ConditionSpec":
        return cls.model_validate(condition.to_record())


class StateSpec(BaseModel):
    """An explicit latent state: row-major values plus an optional grid shape."""

    values: list[float] = Field(..., min_length=1, description="Row-major values")
    shape: list[int] | None = Field(
        None, description="[H, W, C] for grid states; flat when omitted"
    )

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {"example": {"values": [1.0, 0.0]}},
    }

    def to_state(self) -> LatentState:
        if self.shape is None:
            return LatentState.from_flat(self.values)
        layout = Layout.grid(*self.shape) if len(self.shape) == 3 else Layout.flat(self.shape[0])
        return LatentState(layout, np.asarray(self.values))


class SolverMethod(str, Enum):
    """Forward inversion schemes."""

    EULER = "euler"
    FIXED_POINT = "fixed_point"
    AFP = "afp"
    MIDPOINT = "midpoint"


class SolverConfig(BaseModel):
    """Forward inversion settings."""

    n_steps: int = Field(30, ge=1, description="Uniform steps N")
    method: SolverMethod = Field(SolverMethod.EULER, description="Inversion scheme")
    iterations: int = Field(
        1, ge=1, description="Fixed-point iterations K (fixed_point and afp only)"
    )
    condition: ConditionSpec = Field(
        default_factory=ConditionSpec, description="Condition used for inversion (w = 1)"
    )

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {"example": {"n_steps": 30, "method": "afp", "iterations": 1}},
    }

    @classmethod
    def build(
        cls,
        method: SolverMethod,
        n_steps: int,
        condition: Condition | None = None,
        iterations: int = 1,
    ) -> "SolverConfig":
        return cls(
            n_steps=n_steps,
            method=method,
            iterations=iterations,
            condition=ConditionSpec.from_condition(condition or Condition.null()),
        )


class ShapeSpec(BaseModel):
    """Synthetic base-mask primitive; cells inside the shape are set to value."""

    kind: Literal["disk", "rectangle"] = Field(..., description="Primitive type")
    center: list[float] | None = Field(None, description="Disk center [row, col]")
    radius: float | None = Field(None, ge=0.0, description="Disk radius in cells")
    top: int | None = Field(None, ge=0, description="Rectangle top row")
    left: int | None = Field(None, ge=0, description="Rectangle left column")
    height: int | None = Field(None, ge=0, description="Rectangle height")
    width: int | None = Field(None, ge=0, description="Rectangle width")
    value: float = Field(1.0, ge=0.0, le=1.0, description="Value inside the shape")

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def _complete(self) -> "ShapeSpec":
        if self.kind == "disk" and (self.center is None or self.radius is None):
            msg = "disk needs center and radius"
            raise ValueError(msg)
        if self.kind == "rectangle" and None in (self.top, self.left, self.height, self.width):
            msg = "rectangle needs top, left, height and width"
            raise ValueError(msg)
        return self


class MaskSpec(BaseModel):
    """Mask file/inline record: explicit values or a union of synthetic shapes."""

    h: int = Field(..., ge=1, description="Rows")
    w: int = Field(..., ge=1, description="Columns")
    values: list[float] | None = Field(None, description="Row-major values in [0, 1]")
    shapes: list[ShapeSpec] | None = Field(None, description="Shapes combined by pointwise max")

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "example": {"h": 8, "w": 8, "shapes": [{"kind": "disk", "center": [3.5, 3.5], "radius": 2}]}
        },
    }

    @model_validator(mode="after")
    def _one_source(self) -> "MaskSpec":
        if (self.values is None) == (self.shapes is None):
            msg = "mask needs exactly one of values or shapes"
            raise ValueError(msg)
        if self.values is not None:
            if len(self.values) != self.h * self.w:
                msg = "mask values must have h * w entries"
                raise ValueError(msg)
            if any(not 0.0 <= v <= 1.0 for v in self.values):
                msg = "mask values must lie in [0, 1]"
                raise ValueError(msg)
        return self


class MaskConfig(BaseModel):
    """Adaptive mask settings."""

    q: float = Field(0.95, gt=0.5, le=1.0, description="Quantile q")
    tau: float = Field(15.0, gt=0.0, description="Sigmoid temperature")
    k: int = Field(5, ge=1, description="Odd closing kernel size")
    base: MaskSpec | None = Field(None, description="Base mask; all zeros when omitted")

    model_config = {"extra": "forbid", "json_schema_extra": {"example": {"q": 0.95, "tau": 15, "k": 5}}}

    @field_validator("k")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value % 2 == 0:
            msg = "closing kernel size must be odd"
            raise ValueError(msg)
        return value


class CfgMode(str, Enum):
    """Guidance anchor used for the target velocity."""

    STANDARD = "standard"
    SOURCE_ANCHORED = "source_anchored"


class AlphaScheduler(str, Enum):
    """How the interpolation coefficient is computed per step."""

    COSINE_DECAY = "cosine_decay"
    DECAY = "decay"
    COSINE = "cosine"


# name -> (n_steps, gamma, w, afp_iterations)
EDIT_PRESETS: dict[str, dict[str, Any]] = {
    "fast": {"n_steps": 15, "gamma": 4.5, "w": 6.5, "afp_iterations": 1},
    "balanced": {"n_steps": 30, "gamma": 5.5, "w": 3.5, "afp_iterations": 1},
}


class EditConfig(BaseModel):
    """Backward editing knobs."""

    preset: Literal["fast", "balanced"] | None = Field(
        None, description="Fill unset n_steps/gamma/w/afp_iterations from a preset"
    )
    w: float = Field(3.5, ge=0.0, description="Guidance scale")
    gamma: float = Field(5.5, gt=0.0, description="Decay rate of the alpha scheduler")
    n_steps: int = Field(30, ge=1, description="Uniform steps N")
    afp_iterations: int = Field(1, ge=1, description="K for the source inversion")
    cfg_mode: CfgMode = Field(CfgMode.STANDARD, description="Guidance anchor")
    scheduler: AlphaScheduler = Field(AlphaScheduler.COSINE_DECAY, description="Alpha scheduler")
    alpha_override: float | None = Field(
        None, ge=0.0, le=1.0, description="Constant alpha; bypasses the scheduler"
    )
    clamp_negative_cosine: bool = Field(
        True, description="Floor negative cosine at 0; otherwise clip only the final alpha to [0, 1]"
    )
    mask: MaskConfig | None = Field(None, description="Adaptive mask; grid states only")

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {"example": {"preset": "fast", "cfg_mode": "standard"}},
    }

    @model_validator(mode="before")
    @classmethod
    def _apply_preset(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("preset") in EDIT_PRESETS:
            return {**EDIT_PRESETS[data["preset"]], **data}
        return data


class TurnSpec(BaseModel):
    """One multi-turn editing step."""

    target: ConditionSpec = Field(..., description="Target condition of this turn")
    gamma: float | None = Field(None, gt=0.0, description="Per-turn decay rate")
    alpha_override: float | None = Field(None, ge=0.0, le=1.0, description="Per-turn constant alpha")
    base_mask: MaskSpec | None = Field(None, description="Per-turn base mask")

    model_config = {"extra": "forbid", "json_schema_extra": {"example": {"target": {"kind": "label", "id": 1}, "gamma": 4.5}}}


class BenchConfig(BaseModel):
    """Solver benchmark grid."""

    methods: list[SolverMethod] = Field(default_factory=lambda: list(SolverMethod))
    iterations: list[int] = Field(default_factory=lambda: [1, 2, 4, 8])
    n_steps: list[int] = Field(default_factory=lambda: [5, 10, 20, 40])

    model_config = {"extra": "forbid"}


class VerifyConfig(BaseModel):
    """Bound-verification suite sizes."""

    n_steps: list[int] = Field(default_factory=lambda: [5, 10, 20, 40])
    omegas: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    contraction_ratios: list[float] = Field(default_factory=lambda: [0.1, 0.5, 0.9])
    contraction_starts: int = Field(40, ge=1, description="Random starts per contraction ratio")
    afp_iterations: list[int] = Field(default_factory=lambda: [1, 2, 4, 8])
    afp_n_steps: int = Field(10, ge=1)
    decomposition_runs: int = Field(50, ge=1)
    editing_alphas: list[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5, 0.75, 0.9])
    editing_n_steps: int = Field(20, ge=1)
    convexity_points: int = Field(99, ge=1)

    model_config = {"extra": "forbid"}


class SweepConfig(BaseModel):
    """Alpha-scheduler and guidance sweeps."""

    fixed_alphas: list[float] = Field(default_factory=lambda: [0.1, 0.5, 0.9])
    gammas: list[float] = Field(default_factory=lambda: [1.0, 2.5, 4.5, 5.5, 8.0])
    guidance_scales: list[float] = Field(default_factory=lambda: [1.0, 2.0, 3.5, 5.0, 6.5])

    model_config = {"extra": "forbid"}


class PerfectLatentConfig(BaseModel):
    """Solvers compared against the exact latent of an analytic field."""

    methods: list[SolverMethod] = Field(
        default_factory=lambda: [SolverMethod.EULER, SolverMethod.AFP],
        min_length=1,
        description="Inversion schemes run next to the exact latent",
    )

    model_config = {"extra": "forbid"}


class GradCheckConfig(BaseModel):
    """Gradient check sizes."""

    batch_size: int = Field(4, ge=1, le=8)
    n_params: int = Field(50, ge=1)
    step: float = Field(1e-5, gt=0.0)

    model_config = {"extra": "forbid"}


class ExperimentKind(str, Enum):
    """What a run does."""

    TRAIN = "train"
    INVERT = "invert"
    RECONSTRUCT = "reconstruct"
    EDIT = "edit"
    MULTI_TURN = "multiturn"
    BENCH_SOLVERS = "bench"
    VERIFY_BOUNDS = "verify_bounds"
    SWEEP_ALPHA_SCHEDULERS = "sweep_alpha_schedulers"
    SWEEP_GUIDANCE = "sweep_guidance"
    GRAD_CHECK = "grad_check"
    PERFECT_LATENT = "perfect_latent"


class RunConfig(BaseModel):
    """Complete description of one run."""

    experiment: ExperimentKind | None = Field(None, description="Set by the CLI verb when omitted")
    seed: int = Field(0, description="Seed for every random draw of the run")
    output_dir: str | None = Field(None, description="Artifact directory (CLI flag wins)")
    field: FieldSpec | None = Field(None, description="Velocity field")
    source: StateSpec | None = Field(None, description="Source state Z_0")
    source_condition: ConditionSpec = Field(default_factory=ConditionSpec)
    target_condition: ConditionSpec | None = Field(None, description="Edit target condition")
    solver: SolverConfig = Field(default_factory=SolverConfig)
    edit: EditConfig = Field(default_factory=EditConfig)
    turns: list[TurnSpec] = Field(default_factory=list)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    grad_check: GradCheckConfig = Field(default_factory=GradCheckConfig)
    perfect_latent: PerfectLatentConfig = Field(default_factory=PerfectLatentConfig)

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "example": {
                "experiment": "edit",
                "seed": 0,
                "field": {"kind": "trained", "checkpoint": "runs/train/model.json"},
                "source": {"values": [3.0, 1.0]},
                "source_condition": {"kind": "label", "id": 0},
                "target_condition": {"kind": "label", "id": 1},
                "edit": {"preset": "fast"},
            }
        },
    }
