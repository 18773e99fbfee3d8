"""
Adaptive spatial masks for gated editing.

Pipeline per backward step: per-site l2 magnitude of the velocity difference, quantile
normalization, temperature-scaled sigmoid, pointwise max with a base mask, and grayscale
closing with a k x k square and edge-replicate padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import grey_closing
from scipy.special import expit

from flow_edit_lab.core.latent import LatentState
from flow_edit_lab.errors import (
    EmptyStateError,
    InvalidParameterError,
    LayoutMismatchError,
)
from flow_edit_lab.schemas.run import MaskConfig, MaskSpec, ShapeSpec

# Ranges narrower than this are treated as constant
DEGENERATE_RANGE = 1e-12


@dataclass(frozen=True, eq=False)
class Mask:
    """H x W field of values in [0, 1], one per spatial site."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        array = np.array(self.values, dtype=np.float64)
        if array.ndim != 2:
            msg = "masks are two-dimensional"
            raise LayoutMismatchError(msg, shape=list(array.shape))
        if not np.all(np.isfinite(array)) or np.any(array < 0.0) or np.any(array > 1.0):
            msg = "mask values must be finite and lie in [0, 1]"
            raise InvalidParameterError(msg)
        array.setflags(write=False)
        object.__setattr__(self, "values", array)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]

    @classmethod
    def full(cls, height: int, width: int, value: float) -> Mask:
        return cls(np.full((height, width), float(value)))

    @classmethod
    def disk(
        cls, height: int, width: int, center: tuple[float, float], radius: float, value: float = 1.0
    ) -> Mask:
        rows, cols = np.mgrid[0:height, 0:width]
        inside = (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius**2
        return cls(np.where(inside, float(value), 0.0))

    @classmethod
    def rectangle(
        cls,
        height: int,
        width: int,
        top: int,
        left: int,
        rect_height: int,
        rect_width: int,
        value: float = 1.0,
    ) -> Mask:
        values = np.zeros((height, width))
        values[top : top + rect_height, left : left + rect_width] = float(value)
        return cls(values)

    def union(self, *others: Mask) -> Mask:
        """Pointwise max."""
        values = self.values
        for other in others:
            if other.shape != self.shape:
                msg = "masks differ in shape"
                raise LayoutMismatchError(msg, left=list(self.shape), right=list(other.shape))
            values = np.maximum(values, other.values)
        return Mask(values)

    def is_all_ones(self) -> bool:
        return bool(np.all(self.values == 1.0))

    def mean(self) -> float:
        return float(self.values.mean())


def _shape_mask(height: int, width: int, shape: ShapeSpec) -> Mask:
    if shape.kind == "disk":
        center = shape.center or [0.0, 0.0]
        return Mask.disk(height, width, (center[0], center[1]), shape.radius or 0.0, shape.value)
    return Mask.rectangle(
        height,
        width,
        shape.top or 0,
        shape.left or 0,
        shape.height or 0,
        shape.width or 0,
        shape.value,
    )


def mask_from_spec(spec: MaskSpec) -> Mask:
    """Explicit values or the union of synthetic shapes."""
    if spec.values is not None:
        return Mask(np.asarray(spec.values, dtype=np.float64).reshape(spec.h, spec.w))
    result = Mask.full(spec.h, spec.w, 0.0)
    return result.union(*(_shape_mask(spec.h, spec.w, shape) for shape in spec.shapes or []))


def per_site_magnitude(delta_v: LatentState) -> np.ndarray:
    """
    l2 norm over channels at every (h, w) site.

    Raises:
        LayoutMismatchError: If delta_v is flat.
    """
    height, width = delta_v.layout.spatial_shape
    return np.linalg.norm(delta_v.site_vectors(), axis=1).reshape(height, width)


def quantile_normalize(m: np.ndarray, q: float) -> np.ndarray:
    """
    Map quantile(1 - q) to 0 and quantile(q) to 1 using linear-interpolation quantiles.

    The output is not clipped. A range below 1e-12 yields 0.5 everywhere.

    Raises:
        EmptyStateError: If m is empty.
    """
    values = np.asarray(m, dtype=np.float64)
    if values.size == 0:
        msg = "cannot normalize an empty field"
        raise EmptyStateError(msg)
    low = float(np.quantile(values, 1.0 - q, method="linear"))
    high = float(np.quantile(values, q, method="linear"))
    if high - low < DEGENERATE_RANGE:
        return np.full(values.shape, 0.5)
    return (values - low) / (high - low)


def sigmoid_contrast(m: np.ndarray, tau: float) -> Mask:
    """sigmoid(tau * (m - 0.5)) elementwise."""
    if not tau > 0:
        msg = "sigmoid temperature must be positive"
        raise InvalidParameterError(msg, tau=tau)
    return Mask(expit(tau * (np.asarray(m, dtype=np.float64) - 0.5)))


def grayscale_close(m: Mask, k: int) -> Mask:
    """
    k x k dilation followed by k x k erosion, edge-replicate padding.

    Raises:
        InvalidParameterError: If k is even or < 1.
    """
    if k < 1 or k % 2 == 0:
        msg = "closing kernel size must be odd and positive"
        raise InvalidParameterError(msg, k=k)
    if k == 1:
        return m
    return Mask(grey_closing(m.values, size=(k, k), mode="nearest"))


def _resolve_base(delta_v: LatentState, cfg: MaskConfig, base: Mask | None) -> Mask:
    height, width = delta_v.layout.spatial_shape
    if base is None:
        base = mask_from_spec(cfg.base) if cfg.base is not None else Mask.full(height, width, 0.0)
    if base.shape != (height, width):
        msg = "base mask does not match the latent grid"
        raise LayoutMismatchError(msg, mask=list(base.shape), grid=[height, width])
    return base


def adaptive_union(delta_v: LatentState, cfg: MaskConfig, base: Mask | None = None) -> Mask:
    """Pre-closing mask: max(sigmoid(normalized magnitude), base)."""
    resolved = _resolve_base(delta_v, cfg, base)
    contrast = sigmoid_contrast(quantile_normalize(per_site_magnitude(delta_v), cfg.q), cfg.tau)
    return contrast.union(resolved)


def mask_refine(delta_v: LatentState, cfg: MaskConfig, base: Mask | None = None) -> Mask:
    """
    Full adaptive mask for one step.

    Args:
        delta_v (LatentState): Grid velocity difference V_tar - V_src.
        cfg (MaskConfig): q, tau, k and the configured base mask.
        base (Mask, optional): Overrides cfg.base.

    Returns:
        Mask: Closed mask clamped to [0, 1].

    Raises:
        LayoutMismatchError: If delta_v is flat or the base mask shape differs.
    """
    closed = grayscale_close(adaptive_union(delta_v, cfg, base), cfg.k)
    return Mask(np.clip(closed.values, 0.0, 1.0))
