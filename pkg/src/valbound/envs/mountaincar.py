"""MountainCar with the classic-control constants, in plain numpy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NUM_ACTIONS = 3  # push left, no push, push right


@dataclass(frozen=True)
class MountainCarParams:
    min_position: float = -1.2
    max_position: float = 0.6
    max_speed: float = 0.07
    force: float = 0.001
    gravity: float = 0.0025
    goal_position: float = 0.5
    step_reward: float = -1.0
    max_steps: int = 200
    start_low: float = -0.6
    start_high: float = -0.4

    def __post_init__(self):
        if not self.min_position < self.goal_position <= self.max_position:
            raise ValueError("position range must contain the goal")
        if not (self.max_speed > 0 and self.force > 0 and self.gravity > 0):
            raise ValueError("speed, force and gravity must be positive")
        if not self.min_position <= self.start_low <= self.start_high <= self.max_position:
            raise ValueError("start range must lie inside the position range")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


def mountaincar_step(state, action, params=MountainCarParams()):
    """One deterministic step. Returns ``((position, velocity), reward, done)``.

    ``done`` flags reaching the goal; the step cap is tracked by ``MountainCar``.
    """
    if action not in (0, 1, 2):
        raise ValueError(f"invalid action {action!r}; expected 0, 1 or 2")
    pos, vel = float(state[0]), float(state[1])
    vel += (action - 1) * params.force - math.cos(3.0 * pos) * params.gravity
    vel = min(max(vel, -params.max_speed), params.max_speed)
    pos += vel
    pos = min(max(pos, params.min_position), params.max_position)
    if pos == params.min_position and vel < 0:
        vel = 0.0
    done = pos >= params.goal_position
    return (pos, vel), params.step_reward, done


def scale_observation(state, params=MountainCarParams()):
    """Affine map of (position, velocity) onto roughly [-1, 1] for network input."""
    center = 0.5 * (params.min_position + params.max_position)
    half = 0.5 * (params.max_position - params.min_position)
    return np.array([(state[0] - center) / half, state[1] / params.max_speed])


class MountainCar:
    """Single-trajectory environment instance with a step cap.

    ``step`` returns ``(state, reward, terminated, truncated)``: reaching the
    goal terminates, hitting ``max_steps`` truncates.
    """

    def __init__(self, params=MountainCarParams(), rng=None):
        self.params = params
        self.rng = rng if rng is not None else np.random.default_rng()
        self.state = None
        self.t = 0

    def reset(self):
        p = self.params
        self.state = (float(self.rng.uniform(p.start_low, p.start_high)), 0.0)
        self.t = 0
        return self.state

    def step(self, action):
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        self.state, reward, terminated = mountaincar_step(self.state, action, self.params)
        self.t += 1
        truncated = not terminated and self.t >= self.params.max_steps
        return self.state, reward, terminated, truncated
