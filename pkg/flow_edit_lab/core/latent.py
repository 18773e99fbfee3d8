"""
Latent states, conditions and time grids shared by every solver.

A LatentState is either a flat D-vector or an H x W grid of C-channel vectors stored
row-major with the channels of one site contiguous. States are immutable: arithmetic returns
new states and the underlying numpy buffer is marked read-only.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from flow_edit_lab.errors import (
    InvalidInputError,
    InvalidParameterError,
    LayoutMismatchError,
    NonFiniteStateError,
)


class LayoutKind(str, Enum):
    """Shape family of a latent state."""

    FLAT = "flat"
    GRID = "grid"


@dataclass(frozen=True)
class Layout:
    """Flat(D) or Grid(H, W, C)."""

    kind: LayoutKind
    shape: tuple[int, ...]

    def __post_init__(self) -> None:
        expected = 1 if self.kind is LayoutKind.FLAT else 3
        if len(self.shape) != expected or any(dim < 0 for dim in self.shape):
            msg = f"{self.kind.value} layout needs {expected} non-negative dims"
            raise InvalidInputError(msg, shape=list(self.shape))

    @classmethod
    def flat(cls, dim: int) -> Layout:
        return cls(LayoutKind.FLAT, (int(dim),))

    @classmethod
    def grid(cls, height: int, width: int, channels: int) -> Layout:
        return cls(LayoutKind.GRID, (int(height), int(width), int(channels)))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def is_grid(self) -> bool:
        return self.kind is LayoutKind.GRID

    @property
    def spatial_shape(self) -> tuple[int, int]:
        """(H, W) for grids."""
        if not self.is_grid:
            msg = "flat layout has no spatial structure"
            raise LayoutMismatchError(msg, layout=self.to_record())
        return self.shape[0], self.shape[1]

    @property
    def channels(self) -> int:
        return self.shape[2] if self.is_grid else self.shape[0]

    def to_record(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "shape": list(self.shape)}

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> Layout:
        return cls(LayoutKind(record["kind"]), tuple(int(dim) for dim in record["shape"]))


@dataclass(frozen=True, eq=False)
class LatentState:
    """A point Z_t in latent space."""

    layout: Layout
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        array = np.array(self.values, dtype=np.float64)
        if array.size != self.layout.size:
            msg = f"expected {self.layout.size} values, got {array.size}"
            raise LayoutMismatchError(msg, layout=self.layout.to_record())
        array = array.reshape(self.layout.shape)
        if not np.all(np.isfinite(array)):
            msg = "latent state contains non-finite values"
            raise NonFiniteStateError(msg)
        array.setflags(write=False)
        object.__setattr__(self, "values", array)

    @classmethod
    def from_flat(cls, values: Sequence[float] | np.ndarray) -> LatentState:
        array = np.asarray(values, dtype=np.float64).reshape(-1)
        return cls(Layout.flat(array.size), array)

    @classmethod
    def from_grid(cls, values: Sequence[Any] | np.ndarray) -> LatentState:
        array = np.asarray(values, dtype=np.float64)
        if array.ndim != 3:
            msg = "grid states need an (H, W, C) array"
            raise LayoutMismatchError(msg, shape=list(array.shape))
        return cls(Layout.grid(*array.shape), array)

    @classmethod
    def zeros(cls, layout: Layout) -> LatentState:
        return cls(layout, np.zeros(layout.shape))

    def with_values(self, values: np.ndarray) -> LatentState:
        """New state with this layout."""
        return LatentState(self.layout, values)

    def require_same_layout(self, other: LatentState) -> None:
        if self.layout != other.layout:
            msg = "states do not share a layout"
            raise LayoutMismatchError(
                msg, left=self.layout.to_record(), right=other.layout.to_record()
            )

    def flatten(self) -> np.ndarray:
        return self.values.reshape(-1)

    def site_vectors(self) -> np.ndarray:
        """(H*W, C) view of a grid state, one row per spatial site."""
        height, width = self.layout.spatial_shape
        return self.values.reshape(height * width, self.layout.channels)

    def norm(self) -> float:
        return float(np.linalg.norm(self.flatten()))

    def distance(self, other: LatentState) -> float:
        self.require_same_layout(other)
        return float(np.linalg.norm(self.flatten() - other.flatten()))

    def __add__(self, other: LatentState) -> LatentState:
        self.require_same_layout(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: LatentState) -> LatentState:
        self.require_same_layout(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: float) -> LatentState:
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> LatentState:
        return self.with_values(self.values / float(scalar))

    def __neg__(self) -> LatentState:
        return self.with_values(-self.values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LatentState):
            return NotImplemented
        return self.layout == other.layout and bool(np.array_equal(self.values, other.values))

    __hash__ = None  # type: ignore[assignment]

    def to_list(self) -> list[float]:
        """Row-major values as plain floats."""
        return [float(value) for value in self.flatten()]


class ConditionKind(str, Enum):
    """Conditioning token family."""

    NULL = "null"
    LABEL = "label"
    EMBEDDING = "embedding"


@dataclass(frozen=True)
class Condition:
    """Conditioning input c; Null is the unconditional token."""

    kind: ConditionKind = ConditionKind.NULL
    label: int | None = None
    embedding: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind is ConditionKind.LABEL and (self.label is None or self.label < 0):
            msg = "label conditions need a non-negative id"
            raise InvalidParameterError(msg, label=self.label)
        if self.kind is ConditionKind.EMBEDDING and not self.embedding:
            msg = "embedding conditions need a non-empty vector"
            raise InvalidParameterError(msg)

    @classmethod
    def null(cls) -> Condition:
        return cls()

    @classmethod
    def of_label(cls, label: int) -> Condition:
        return cls(ConditionKind.LABEL, label=int(label))

    @classmethod
    def of_embedding(cls, vector: Sequence[float]) -> Condition:
        return cls(ConditionKind.EMBEDDING, embedding=tuple(float(x) for x in vector))

    @property
    def is_null(self) -> bool:
        return self.kind is ConditionKind.NULL

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {"kind": self.kind.value}
        if self.kind is ConditionKind.LABEL:
            record["id"] = self.label
        elif self.kind is ConditionKind.EMBEDDING:
            record["vector"] = list(self.embedding or ())
        return record

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> Condition:
        kind = ConditionKind(record.get("kind", "null"))
        if kind is ConditionKind.LABEL:
            return cls.of_label(record["id"])
        if kind is ConditionKind.EMBEDDING:
            return cls.of_embedding(record["vector"])
        return cls.null()

    def describe(self) -> str:
        if self.kind is ConditionKind.LABEL:
            return f"label:{self.label}"
        if self.kind is ConditionKind.EMBEDDING:
            return f"embedding[{len(self.embedding or ())}]"
        return "null"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i / N, i = 0..N."""

    n_steps: int

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            msg = "time grid needs at least one step"
            raise InvalidParameterError(msg, n_steps=self.n_steps)

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    def t(self, i: int) -> float:
        return i / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1, dtype=np.float64) / self.n_steps
