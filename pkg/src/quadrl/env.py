"""Hover MDP around the origin: reset distribution, observations, reward."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (
    RPM_TO_RADS,
    QuadParams,
    QuadState,
    SimulationDiverged,
    advance,
)

SIM_DT = 0.001


@dataclass(frozen=True)
class RewardParams:
    survival: float = 2.0
    position: float = 2.5
    orientation: float = 2.5
    velocity: float = 0.05
    action: float = 0.05
    action_baseline: float = 0.35

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value >= 0:
                raise ValueError(f"reward weight {name} must be >= 0, got {value!r}")


@dataclass(frozen=True)
class EnvConfig:
    history: int = 32
    control_dt: float = 0.01
    substeps: int = 10
    episode_steps: int = 500
    noise_position: float = 0.001
    noise_rotation: float = 0.001
    noise_velocity: float = 0.002
    noise_omega: float = 0.002
    init_box: float = 0.1
    init_max_angle: float = math.pi / 2
    init_max_speed: float = 1.0
    init_max_omega: float = 1.0
    position_bound: float = 2.0
    curriculum_bound: float = 1.0
    min_rpm: float = -21702.0
    max_rpm: float = 27102.0

    def __post_init__(self):
        if self.history < 0:
            raise ValueError("history must be >= 0")
        if self.substeps < 1 or self.episode_steps < 1:
            raise ValueError("substeps and episode_steps must be >= 1")
        if not math.isclose(self.control_dt, self.substeps * SIM_DT, rel_tol=1e-9):
            raise ValueError(
                f"control_dt ({self.control_dt}) must equal substeps x {SIM_DT} s"
            )
        if self.max_rpm <= self.min_rpm:
            raise ValueError("max_rpm must exceed min_rpm")

    @property
    def obs_dim(self) -> int:
        return 18 + 4 * self.history

    @property
    def noise_std(self) -> np.ndarray:
        """Per-entry noise for the 18 state entries of an observation."""
        return np.concatenate(
            [
                np.full(3, self.noise_position),
                np.full(9, self.noise_rotation),
                np.full(3, self.noise_velocity),
                np.full(3, self.noise_omega),
            ]
        )


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    state: QuadState


class EpisodeOver(RuntimeError):
    """Raised when stepping an environment whose episode has ended."""


def map_action(action, cfg: EnvConfig, omega_max: float = math.inf) -> np.ndarray:
    """Normalized action in [-1, 1]^4 to rotor speed setpoints in rad/s."""
    a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    rpm = cfg.min_rpm + 0.5 * (a + 1.0) * (cfg.max_rpm - cfg.min_rpm)
    return np.clip(rpm * RPM_TO_RADS, 0.0, omega_max)


def rpm_to_action(rpm, cfg: EnvConfig) -> np.ndarray:
    """Inverse of the affine part of ``map_action``."""
    return 2.0 * (np.asarray(rpm, dtype=float) - cfg.min_rpm) / (cfg.max_rpm - cfg.min_rpm) - 1.0


def orientation_error(R: np.ndarray) -> float:
    """sin^2 of the geodesic angle between ``R`` and the identity."""
    c = 0.5 * (float(R[0, 0] + R[1, 1] + R[2, 2]) - 1.0)
    return 1.0 - c * c


def reward(state: QuadState, action, params: RewardParams) -> float:
    a = np.asarray(action, dtype=float)
    p, v = state.position, state.velocity
    da = a - params.action_baseline
    return float(
        params.survival
        - params.position * float(p @ p)
        - params.orientation * orientation_error(state.rotation)
        - params.velocity * float(v @ v)
        - params.action * float(da @ da)
    )


def is_terminal(state: QuadState, cfg: EnvConfig, bound: float | None = None) -> bool:
    if not state.is_finite():
        return True
    return bool(np.max(np.abs(state.position)) > (cfg.position_bound if bound is None else bound))


def state_vector(state: QuadState) -> np.ndarray:
    """Noise-free 18-entry block [p, R row-major, v, omega]."""
    return np.concatenate([state.position, state.rotation.ravel(), state.velocity, state.omega])


def random_rotation(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    """Haar-uniform rotation conditioned on angle <= ``max_angle``.

    Under the Haar measure the axis is uniform and the angle has density
    proportional to sin^2(angle / 2); the angle is drawn by rejection from a
    uniform proposal on [0, max_angle], which accepts at least a third of
    the time for any cap up to pi.
    """
    max_angle = min(float(max_angle), math.pi)
    if max_angle <= 0.0:
        return np.eye(3)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    peak = math.sin(max_angle / 2.0) ** 2
    while True:
        angle = rng.uniform(0.0, max_angle)
        if rng.uniform() * peak <= math.sin(angle / 2.0) ** 2:
            break
    K = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def uniform_ball(rng: np.random.Generator, radius: float, dim: int = 3) -> np.ndarray:
    d = rng.standard_normal(dim)
    d /= np.linalg.norm(d)
    return d * radius * rng.uniform() ** (1.0 / dim)


def sample_initial_state(rng: np.random.Generator, cfg: EnvConfig, params: QuadParams,
                         difficulty: float = 1.0) -> QuadState:
    """Draw a reset state; ``difficulty`` in [0, 1] scales the attitude and rate caps."""
    return QuadState(
        position=rng.uniform(-cfg.init_box, cfg.init_box, size=3),
        velocity=uniform_ball(rng, difficulty * cfg.init_max_speed),
        rotation=random_rotation(rng, difficulty * cfg.init_max_angle),
        omega=uniform_ball(rng, difficulty * cfg.init_max_omega),
        rotors=np.full(4, params.hover_omega),
    )


class HoverEnv:
    """Quadcopter hover task with action history in the observation.

    The observation is ``[p, R (row-major), v, omega, H]`` where ``H`` holds
    the last ``history`` normalized actions, most recent first. Gaussian noise
    is added to the state block only. Rewards use the noise-free state.

    ``target`` shifts the observed position (``p - target``); the reward
    always measures distance to the origin of the simulator frame minus the
    same target, so tracking can be done by moving it between steps.
    """

    def __init__(
        self,
        params: QuadParams | None = None,
        cfg: EnvConfig | None = None,
        reward_params: RewardParams | None = None,
        seed: int | None = None,
    ):
        self.params = params or QuadParams()
        self.cfg = cfg or EnvConfig()
        self.reward_params = reward_params or RewardParams()
        self.rng = np.random.default_rng(seed)
        self.target = np.zeros(3)
        self.state: QuadState | None = None
        self.history = np.zeros(4 * self.cfg.history)
        self.steps = 0
        self.done = True
        self.difficulty = 1.0
        self._noise_std = self.cfg.noise_std

    @property
    def obs_dim(self) -> int:
        return self.cfg.obs_dim

    @property
    def act_dim(self) -> int:
        return 4

    @property
    def hover_action(self) -> np.ndarray:
        """Normalized action that commands hover speed on every rotor."""
        return rpm_to_action(np.full(4, self.params.hover_omega / RPM_TO_RADS), self.cfg)

    def seed(self, seed: int | None) -> None:
        self.rng = np.random.default_rng(seed)

    def set_difficulty(self, difficulty: float) -> None:
        """Scale the reset distribution's attitude, velocity and rate caps (1 = full).

        The termination box moves from ``curriculum_bound`` to ``position_bound``
        along with it.
        """
        self.difficulty = float(np.clip(difficulty, 0.0, 1.0))

    @property
    def bound(self) -> float:
        lo, hi = self.cfg.curriculum_bound, self.cfg.position_bound
        return lo + self.difficulty * (hi - lo)

    def reset(self, seed: int | None = None, state: QuadState | None = None) -> tuple[QuadState, np.ndarray]:
        if seed is not None:
            self.seed(seed)
        if state is None:
            state = sample_initial_state(self.rng, self.cfg, self.params, self.difficulty)
        self.state = state
        self.history = np.zeros(4 * self.cfg.history)
        self.steps = 0
        self.done = False
        return state, self.observe()

    def observe(self) -> np.ndarray:
        s = state_vector(self.state)
        s[0:3] -= self.target
        s += self._noise_std * self.rng.standard_normal(18)
        return np.concatenate([s, self.history])

    def position_error(self) -> float:
        return float(np.linalg.norm(self.state.position - self.target))

    def relative_state(self) -> QuadState:
        st = self.state
        return QuadState(st.position - self.target, st.velocity, st.rotation, st.omega, st.rotors)

    def step(self, action) -> StepResult:
        if self.state is None or self.done:
            raise EpisodeOver("call reset() before stepping")
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        setpoint = map_action(a, self.cfg, self.params.omega_max)
        try:
            self.state = advance(self.state, setpoint, SIM_DT, self.cfg.substeps, self.params)
        except SimulationDiverged:
            self.done = True
            return StepResult(self.observe(), 0.0, True, False, self.state)
        if self.cfg.history:
            self.history = np.concatenate([a, self.history[:-4]])
        self.steps += 1
        terminated = is_terminal(self.relative_state(), self.cfg, self.bound)
        truncated = (not terminated) and self.steps >= self.cfg.episode_steps
        r = reward(self.relative_state(), a, self.reward_params)
        self.done = terminated or truncated
        return StepResult(self.observe(), r, terminated, truncated, self.state)


@dataclass
class EpisodeLog:
    rows: list = field(default_factory=list)

    def record(self, t: float, state: QuadState, action, r: float) -> None:
        self.rows.append(
            [t, *state.position, *state.velocity, *state.rotation.ravel(), *state.omega, *action, r]
        )

    def to_csv(self, path) -> None:
        header = (
            ["t", "x", "y", "z", "vx", "vy", "vz"]
            + [f"r{i}{j}" for i in range(3) for j in range(3)]
            + ["wx", "wy", "wz", "a1", "a2", "a3", "a4", "reward"]
        )
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(self.rows)
