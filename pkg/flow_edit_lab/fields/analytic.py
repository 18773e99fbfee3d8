"""
Analytic velocity fields with certified Lipschitz and curvature constants.

Every analytic field is drift(z, t) plus a condition offset: label k adds label_offsets[k],
an embedding condition adds its vector, and the null condition adds nothing. The difference
v(., c) - v(., null) is therefore constant in z, so guided fields share the drift's
Lipschitz constant.

Curvature constants hold for trajectories that stay inside the ball of the declared radius.
"""

import math
from collections.abc import Sequence
from typing import Any

import numpy as np

from flow_edit_lab.core.latent import Condition, ConditionKind
from flow_edit_lab.errors import InvalidParameterError, LayoutMismatchError
from flow_edit_lab.fields.base import VelocityField
from flow_edit_lab.schemas.run import CfgMode


def _skew_pairs(z: np.ndarray, omega: float) -> np.ndarray:
    """omega * J z with J = [[0, -1], [1, 0]] applied to consecutive coordinate pairs."""
    if z.size % 2:
        msg = "rotation fields need an even number of coordinates"
        raise LayoutMismatchError(msg, size=int(z.size))
    out = np.empty_like(z)
    out[0::2] = -omega * z[1::2]
    out[1::2] = omega * z[0::2]
    return out


def _require_finite(**params: float) -> None:
    for name, value in params.items():
        if not math.isfinite(value):
            msg = f"{name} must be finite"
            raise InvalidParameterError(msg, **{name: value})


class AnalyticField(VelocityField):
    """Base class for closed-form fields."""

    kind = "analytic"

    def __init__(self, label_offsets: Sequence[Sequence[float]] = (), radius: float = 4.0) -> None:
        if radius <= 0:
            msg = "radius must be positive"
            raise InvalidParameterError(msg, radius=radius)
        self.label_offsets = [np.asarray(offset, dtype=np.float64) for offset in label_offsets]
        for offset in self.label_offsets:
            if not np.all(np.isfinite(offset)):
                msg = "label offsets must be finite"
                raise InvalidParameterError(msg)
        self.radius = float(radius)

    @property
    def offset_bound(self) -> float:
        """Largest label-offset norm S."""
        return max((float(np.linalg.norm(offset)) for offset in self.label_offsets), default=0.0)

    def drift(self, z: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def offset(self, condition: Condition, size: int) -> np.ndarray:
        """Condition-dependent additive term."""
        if condition.kind is ConditionKind.NULL:
            return np.zeros(size)
        if condition.kind is ConditionKind.EMBEDDING:
            vector = np.asarray(condition.embedding, dtype=np.float64)
        else:
            label = condition.label if condition.label is not None else -1
            if not 0 <= label < len(self.label_offsets):
                msg = "label has no offset in this field"
                raise InvalidParameterError(msg, label=label, n_labels=len(self.label_offsets))
            vector = self.label_offsets[label]
        if vector.size != size:
            msg = "condition offset does not match the state size"
            raise LayoutMismatchError(msg, expected=size, got=int(vector.size))
        return vector

    def velocity(self, z: np.ndarray, t: float, condition: Condition) -> np.ndarray:
        return self.drift(z, t) + self.offset(condition, z.size)

    def linear_part(self, size: int, t: float) -> np.ndarray:
        """Matrix A of the drift z -> A z + b(t); every analytic drift is affine in z."""
        origin = self.drift(np.zeros(size), t)
        return np.column_stack([self.drift(unit, t) - origin for unit in np.eye(size)])

    def _base_descriptor(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "label_offsets": [offset.tolist() for offset in self.label_offsets],
            "radius": self.radius,
            "lipschitz_bound": self.lipschitz_bound,
            "curvature_bound": self.curvature_bound,
        }


class ConstantField(AnalyticField):
    """v(z, t) = c. L = M = 0."""

    kind = "constant"

    def __init__(self, velocity: Sequence[float], **kwargs: Any) -> None:
        super().__init__(**kwargs)
        self.constant = np.asarray(velocity, dtype=np.float64)
        if self.constant.size == 0 or not np.all(np.isfinite(self.constant)):
            msg = "constant velocity must be a non-empty finite vector"
            raise InvalidParameterError(msg)
        self.lipschitz_bound = 0.0
        self.curvature_bound = 0.0

    def drift(self, z: np.ndarray, t: float) -> np.ndarray:
        if z.size != self.constant.size:
            msg = "constant velocity does not match the state size"
            raise LayoutMismatchError(msg, expected=int(self.constant.size), got=int(z.size))
        return self.constant.copy()

    @property
    def descriptor(self) -> dict[str, Any]:
        return {**self._base_descriptor(), "velocity": self.constant.tolist()}


class LinearSkewField(AnalyticField):
    """v = omega * J z; trajectories are rotations at rate omega."""

    kind = "linear_skew"

    def __init__(self, omega: float, **kwargs: Any) -> None:
        super().__init__(**kwargs)
        _require_finite(omega=omega)
        self.omega = float(omega)
        rate = abs(self.omega)
        self.lipschitz_bound = rate
        # ||dv/dt|| = ||A v|| <= |omega| (|omega| R + S)
        self.curvature_bound = rate * (rate * self.radius + self.offset_bound)

    def drift(self, z: np.ndarray, t: float) -> np.ndarray:
        return _skew_pairs(z, self.omega)

    @property
    def descriptor(self) -> dict[str, Any]:
        return {**self._base_descriptor(), "omega": self.omega}


class ContractingSpiralField(AnalyticField):
    """v = (-rate * I + omega * J) z."""

    kind = "contracting_spiral"

    def __init__(self, rate: float, omega: float, **kwargs: Any) -> None:
        super().__init__(**kwargs)
        _require_finite(rate=rate, omega=omega)
        if rate < 0:
            msg = "contraction rate must be non-negative"
            raise InvalidParameterError(msg, rate=rate)
        self.rate = float(rate)
        self.omega = float(omega)
        lipschitz = math.hypot(self.rate, self.omega)
        self.lipschitz_bound = lipschitz
        self.curvature_bound = lipschitz * (lipschitz * self.radius + self.offset_bound)

    def drift(self, z: np.ndarray, t: float) -> np.ndarray:
        return -self.rate * z + _skew_pairs(z, self.omega)

    @property
    def descriptor(self) -> dict[str, Any]:
        return {**self._base_descriptor(), "rate": self.rate, "omega": self.omega}


class TimeCurvedField(AnalyticField):
    """
    v = A z + a * sin(2 pi f t) * u, u = (1, ..., 1) / sqrt(D).

    A is an explicit matrix or skew_rate * J on coordinate pairs. The explicit time
    dependence makes trajectories curved even when A = 0.
    """

    kind = "time_curved"

    def __init__(
        self,
        matrix: Sequence[Sequence[float]] | None = None,
        skew_rate: float = 0.5,
        amplitude: float = 1.0,
        frequency: float = 0.25,
        **kwargs: Any,
    ) -> None:
        super().__init__(**kwargs)
        _require_finite(skew_rate=skew_rate, amplitude=amplitude, frequency=frequency)
        self.matrix = None if matrix is None else np.asarray(matrix, dtype=np.float64)
        if self.matrix is not None and (
            self.matrix.ndim != 2
            or self.matrix.shape[0] != self.matrix.shape[1]
            or not np.all(np.isfinite(self.matrix))
        ):
            msg = "matrix must be square and finite"
            raise InvalidParameterError(msg)
        self.skew_rate = float(skew_rate)
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)

        lipschitz = (
            float(np.linalg.norm(self.matrix, 2)) if self.matrix is not None else abs(self.skew_rate)
        )
        self.lipschitz_bound = lipschitz
        # ||A v + 2 pi f a cos(2 pi f t) u|| with ||v|| <= L R + |a| + S
        forcing_rate = 2.0 * math.pi * abs(self.frequency) * abs(self.amplitude)
        self.curvature_bound = forcing_rate + lipschitz * (
            lipschitz * self.radius + abs(self.amplitude) + self.offset_bound
        )

    def drift(self, z: np.ndarray, t: float) -> np.ndarray:
        if self.matrix is None:
            linear = _skew_pairs(z, self.skew_rate)
        else:
            if self.matrix.shape[0] != z.size:
                msg = "matrix does not match the state size"
                raise LayoutMismatchError(msg, expected=self.matrix.shape[0], got=int(z.size))
            linear = self.matrix @ z
        forcing = self.amplitude * math.sin(2.0 * math.pi * self.frequency * t) / math.sqrt(z.size)
        return linear + forcing

    @property
    def descriptor(self) -> dict[str, Any]:
        return {
            **self._base_descriptor(),
            "matrix": None if self.matrix is None else self.matrix.tolist(),
            "skew_rate": self.skew_rate,
            "amplitude": self.amplitude,
            "frequency": self.frequency,
        }


def analytic_delta_max(
    field: AnalyticField,
    c_src: Condition,
    c_tar: Condition,
    w: float,
    cfg_mode: CfgMode = CfgMode.STANDARD,
    size: int | None = None,
) -> float:
    """
    Closed-form maximum deviation between the guided target velocity and the source velocity.

    With offsets b, standard guidance gives ||w * b_tar - b_src|| and source-anchored guidance
    gives w * ||b_tar - b_src||, independent of z and t.

    Args:
        field (AnalyticField): Field with label offsets.
        c_src (Condition): Source condition.
        c_tar (Condition): Target condition.
        w (float): Guidance scale.
        cfg_mode (CfgMode): Guidance anchor.
        size (int, optional): State size; inferred from the offsets when omitted.

    Returns:
        float: delta_max.
    """
    if size is None:
        sizes = [offset.size for offset in field.label_offsets]
        sizes += [len(c.embedding or ()) for c in (c_src, c_tar) if c.kind is ConditionKind.EMBEDDING]
        if not sizes:
            return 0.0
        size = sizes[0]
    b_src = field.offset(c_src, size)
    b_tar = field.offset(c_tar, size)
    if cfg_mode is CfgMode.SOURCE_ANCHORED:
        return abs(w) * float(np.linalg.norm(b_tar - b_src))
    return float(np.linalg.norm(w * b_tar - b_src))
