"""
Trajectories over a uniform time grid and their JSON-lines file format.

File layout: line 1 is a header {n_steps, layout, condition, direction}; each following line
is {i, t, state, velocity} for i = 0..N, with velocity null on the last line. Floats are
written with Python's shortest round-trip repr, so a write/read cycle is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from flow_edit_lab.config import logger
from flow_edit_lab.core.latent import Condition, LatentState, Layout, TimeGrid
from flow_edit_lab.errors import InvalidInputError, LayoutMismatchError, StepIndexError
from flow_edit_lab.schemas.trajectory import TrajectoryHeader, TrajectoryLine


class Direction(str, Enum):
    """Integration direction that produced a trajectory."""

    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class Trajectory:
    """
    States Z_{t_0}..Z_{t_N} plus the N step velocities.

    velocities[i] is the velocity that links states[i] and states[i+1]:
    states[i+1] = states[i] + dt * velocities[i] for forward trajectories and
    states[i] = states[i+1] - dt * velocities[i] for backward ones.
    """

    grid: TimeGrid
    states: tuple[LatentState, ...]
    velocities: tuple[LatentState, ...]
    condition: Condition
    direction: Direction

    def __post_init__(self) -> None:
        n_steps = self.grid.n_steps
        if len(self.states) != n_steps + 1 or len(self.velocities) != n_steps:
            msg = "trajectory needs N+1 states and N velocities"
            raise InvalidInputError(
                msg, n_steps=n_steps, states=len(self.states), velocities=len(self.velocities)
            )
        layout = self.states[0].layout
        for item in (*self.states, *self.velocities):
            if item.layout != layout:
                msg = "trajectory states must share one layout"
                raise LayoutMismatchError(msg, layout=layout.to_record())

    @property
    def layout(self) -> Layout:
        return self.states[0].layout

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def start(self) -> LatentState:
        return self.states[0]

    @property
    def end(self) -> LatentState:
        return self.states[-1]

    def max_step_residual(self) -> float:
        """Largest relative violation of the Euler-step relation between stored states."""
        dt = self.grid.dt
        worst = 0.0
        for i, velocity in enumerate(self.velocities):
            predicted = self.states[i].values + dt * velocity.values
            actual = self.states[i + 1].values
            scale = max(float(np.linalg.norm(actual)), float(np.linalg.norm(predicted)), 1e-300)
            worst = max(worst, float(np.linalg.norm(predicted - actual)) / scale)
        return worst


def finite_diff_velocity(traj: Trajectory, i: int) -> LatentState:
    """
    Cached velocity over [t_{i-1}, t_i]: (states[i] - states[i-1]) / dt.

    Args:
        traj (Trajectory): Forward or backward trajectory.
        i (int): Step index, 1 <= i <= N.

    Returns:
        LatentState: The recovered step velocity.

    Raises:
        StepIndexError: If i is out of range.
    """
    if not 1 <= i <= traj.n_steps:
        msg = "finite-difference index out of range"
        raise StepIndexError(msg, i=i, n_steps=traj.n_steps)
    return (traj.states[i] - traj.states[i - 1]) / traj.grid.dt


def max_state_deviation(a: Trajectory, b: Trajectory) -> float:
    """Max over i of ||a.states[i] - b.states[i]||."""
    if a.n_steps != b.n_steps or a.layout != b.layout:
        msg = "trajectories differ in step count or layout"
        raise LayoutMismatchError(
            msg,
            left_steps=a.n_steps,
            right_steps=b.n_steps,
            left=a.layout.to_record(),
            right=b.layout.to_record(),
        )
    return max(left.distance(right) for left, right in zip(a.states, b.states, strict=True))


def write_trajectory(traj: Trajectory, path: Path) -> None:
    """Serialize a trajectory to JSON lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    header = TrajectoryHeader(
        n_steps=traj.n_steps,
        layout=traj.layout.to_record(),
        condition=traj.condition.to_record(),
        direction=traj.direction.value,
    )
    lines = [json.dumps(header.model_dump())]
    for i, state in enumerate(traj.states):
        velocity = traj.velocities[i].to_list() if i < traj.n_steps else None
        line = TrajectoryLine(i=i, t=traj.grid.t(i), state=state.to_list(), velocity=velocity)
        lines.append(json.dumps(line.model_dump()))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug("Trajectory written", extra={"path": str(path), "n_steps": traj.n_steps})


def read_trajectory(path: Path) -> Trajectory:
    """
    Load a trajectory written by write_trajectory.

    Raises:
        InvalidInputError: If the file is truncated or its lines are out of order.
    """
    raw_lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not raw_lines:
        msg = "trajectory file is empty"
        raise InvalidInputError(msg, path=str(path))
    header = TrajectoryHeader.model_validate(json.loads(raw_lines[0]))
    layout = Layout.from_record(header.layout)
    body = [TrajectoryLine.model_validate(json.loads(line)) for line in raw_lines[1:]]
    if len(body) != header.n_steps + 1 or [line.i for line in body] != list(range(len(body))):
        msg = "trajectory file lines do not match its header"
        raise InvalidInputError(msg, path=str(path), n_steps=header.n_steps, lines=len(body))

    states = tuple(LatentState(layout, np.asarray(line.state)) for line in body)
    velocities = []
    for line in body[:-1]:
        if line.velocity is None:
            msg = "missing step velocity"
            raise InvalidInputError(msg, path=str(path), i=line.i)
        velocities.append(LatentState(layout, np.asarray(line.velocity)))
    return Trajectory(
        grid=TimeGrid(header.n_steps),
        states=states,
        velocities=tuple(velocities),
        condition=Condition.from_record(header.condition),
        direction=Direction(header.direction),
    )
