"""
Latent states, time grids, trajectories and shared primitives.
"""

from flow_edit_lab.core.latent import (
    Condition,
    ConditionKind,
    LatentState,
    Layout,
    LayoutKind,
    TimeGrid,
)
from flow_edit_lab.core.similarity import spatial_cosine
from flow_edit_lab.core.trajectory import (
    Direction,
    Trajectory,
    finite_diff_velocity,
    max_state_deviation,
    read_trajectory,
    write_trajectory,
)

__all__ = [
    "Condition",
    "ConditionKind",
    "Direction",
    "LatentState",
    "Layout",
    "LayoutKind",
    "TimeGrid",
    "Trajectory",
    "finite_diff_velocity",
    "max_state_deviation",
    "read_trajectory",
    "spatial_cosine",
    "write_trajectory",
]
