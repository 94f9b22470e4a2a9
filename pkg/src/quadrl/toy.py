"""1-D double integrator with a hover-style reward, for validating the trainer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import EpisodeOver, StepResult


@dataclass(frozen=True)
class ToyConfig:
    dt: float = 0.05
    max_accel: float = 2.0
    episode_steps: int = 100
    init_position: float = 0.5
    init_velocity: float = 0.5
    bound: float = 2.0
    survival: float = 2.0
    position_weight: float = 1.0
    velocity_weight: float = 0.05
    action_weight: float = 0.05


class DoubleIntegratorEnv:
    """Point mass on a line; the action is a normalized acceleration."""

    act_dim = 1
    obs_dim = 2

    def __init__(self, cfg: ToyConfig | None = None, seed: int | None = None):
        self.cfg = cfg or ToyConfig()
        self.rng = np.random.default_rng(seed)
        self.x = self.v = 0.0
        self.steps = 0
        self.done = True

    def seed(self, seed: int | None) -> None:
        self.rng = np.random.default_rng(seed)

    def observe(self) -> np.ndarray:
        return np.array([self.x, self.v])

    def reset(self, seed: int | None = None):
        if seed is not None:
            self.seed(seed)
        c = self.cfg
        self.x = float(self.rng.uniform(-c.init_position, c.init_position))
        self.v = float(self.rng.uniform(-c.init_velocity, c.init_velocity))
        self.steps = 0
        self.done = False
        return (self.x, self.v), self.observe()

    def position_error(self) -> float:
        return abs(self.x)

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeOver("call reset() before stepping")
        c = self.cfg
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
        u = a * c.max_accel
        self.x += c.dt * self.v + 0.5 * c.dt**2 * u
        self.v += c.dt * u
        self.steps += 1
        r = c.survival - c.position_weight * self.x**2 - c.velocity_weight * self.v**2 - c.action_weight * a**2
        terminated = abs(self.x) > c.bound
        truncated = not terminated and self.steps >= c.episode_steps
        self.done = terminated or truncated
        return StepResult(self.observe(), r, terminated, truncated, (self.x, self.v))
