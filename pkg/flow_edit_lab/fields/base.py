"""
Velocity-field interface and evaluation counting.
"""

from abc import ABC, abstractmethod
from typing import Any

import numpy as np

from flow_edit_lab.core.latent import Condition, LatentState


class VelocityField(ABC):
    """
    Conditional velocity field v(z, t, c).

    Subclasses implement velocity() on flat float64 vectors; eval() wraps it so callers work
    with LatentState values of any layout. Bounds are None when no certificate exists.
    """

    lipschitz_bound: float | None = None
    curvature_bound: float | None = None

    @abstractmethod
    def velocity(self, z: np.ndarray, t: float, condition: Condition) -> np.ndarray:
        """Velocity at a flat state vector."""

    @property
    @abstractmethod
    def descriptor(self) -> dict[str, Any]:
        """Field kind plus parameters, echoed into run results."""

    def eval(self, z: LatentState, t: float, condition: Condition) -> LatentState:
        return z.with_values(self.velocity(z.flatten(), float(t), condition))


class CountingField(VelocityField):
    """Delegating wrapper that counts velocity evaluations (NFE)."""

    def __init__(self, inner: VelocityField) -> None:
        self.inner = inner
        self.count = 0
        self.lipschitz_bound = inner.lipschitz_bound
        self.curvature_bound = inner.curvature_bound

    def velocity(self, z: np.ndarray, t: float, condition: Condition) -> np.ndarray:
        self.count += 1
        return self.inner.velocity(z, t, condition)

    @property
    def descriptor(self) -> dict[str, Any]:
        return self.inner.descriptor
