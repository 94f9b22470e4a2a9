"""Closed-loop trajectory tracking runs and RMSE reporting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics import RPM_TO_RADS, QuadParams, QuadState
from .env import EnvConfig, HoverEnv, RewardParams, rpm_to_action
from .pid import PidController, PidGains


def circle_trajectory(t: float, period: float, radius: float = 1.0, center=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Point on a horizontal circle, starting at ``center + (radius, 0, 0)``."""
    if period <= 0:
        raise ValueError("period must be positive")
    phase = 2.0 * math.pi * t / period
    return np.asarray(center, dtype=float) + radius * np.array([math.cos(phase), math.sin(phase), 0.0])


@dataclass(frozen=True)
class Trajectory:
    period: float = 6.0
    radius: float = 1.0
    center: tuple[float, float, float] = (0.0, 0.0, 1.0)
    duration: float = 12.0
    takeoff_time: float = 0.0

    def __post_init__(self):
        if self.period <= 0 or self.duration <= 0:
            raise ValueError("period and duration must be positive")
        if self.takeoff_time < 0:
            raise ValueError("takeoff_time must be >= 0")

    def position(self, t: float) -> np.ndarray:
        return circle_trajectory(max(0.0, t - self.takeoff_time), self.period, self.radius, self.center)

    def start(self) -> np.ndarray:
        p = self.position(0.0)
        if self.takeoff_time > 0:
            p[2] = 0.0
        return p


@dataclass
class TrackingLog:
    dt: float
    t: list = field(default_factory=list)
    desired: list = field(default_factory=list)
    position: list = field(default_factory=list)
    velocity: list = field(default_factory=list)
    action: list = field(default_factory=list)
    crashed: bool = False

    def append(self, t, desired, position, velocity, action) -> None:
        self.t.append(float(t))
        self.desired.append(np.array(desired, dtype=float))
        self.position.append(np.array(position, dtype=float))
        self.velocity.append(np.array(velocity, dtype=float))
        self.action.append(np.array(action, dtype=float))

    def __len__(self) -> int:
        return len(self.t)

    def arrays(self):
        return (
            np.asarray(self.t),
            np.asarray(self.desired).reshape(-1, 3),
            np.asarray(self.position).reshape(-1, 3),
        )

    def peak_speed(self) -> float:
        return float(max(np.linalg.norm(v) for v in self.velocity)) if self.velocity else 0.0

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "xd", "yd", "zd", "x", "y", "z", "vx", "vy", "vz", "a1", "a2", "a3", "a4"])
            for row in zip(self.t, self.desired, self.position, self.velocity, self.action):
                w.writerow([repr(row[0]), *map(repr, np.concatenate(row[1:]).tolist())])
            if self.crashed:
                w.writerow(["# crashed"])

    @classmethod
    def from_csv(cls, path, dt: float) -> TrackingLog:
        log = cls(dt=dt)
        with Path(path).open() as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                if row and row[0].startswith("#"):
                    log.crashed = True
                    continue
                v = [float(x) for x in row]
                log.append(v[0], v[1:4], v[4:7], v[7:10], v[10:14])
        return log


def rmse(log: TrackingLog, transient: float = 0.0) -> tuple[float, float]:
    """Tracking RMSE over all axes and over the horizontal plane.

    Samples with ``t < transient`` are excluded.
    """
    t, pd, p = log.arrays()
    keep = t >= transient
    if not np.any(keep):
        raise ValueError("no samples to evaluate")
    err = p[keep] - pd[keep]
    sq = err * err
    e = math.sqrt(float(np.mean(sq.sum(axis=1))) / 3.0)
    e_xy = math.sqrt(float(np.mean(sq[:, 0] + sq[:, 1])) / 2.0)
    return e, e_xy


def tracking_errors(log: TrackingLog, transient: float) -> tuple[float, float]:
    """:func:`rmse` for reports: a log that crashed inside the transient window is scored whole."""
    if log.t and log.t[-1] < transient:
        return rmse(log, 0.0)
    return rmse(log, transient)


class PolicyTracker:
    """Feeds the learned policy observations shifted by the current setpoint."""

    name = "policy"

    def __init__(self, policy: Callable[[np.ndarray], np.ndarray]):
        self.policy = policy

    def reset(self) -> None:
        pass

    def action(self, obs: np.ndarray, state: QuadState, target: np.ndarray, env: HoverEnv) -> np.ndarray:
        return np.clip(self.policy(obs), -1.0, 1.0)


class PidTracker:
    """Wraps :class:`PidController`; rotor setpoints are converted to normalized actions."""

    name = "pid"

    def __init__(self, params: QuadParams | None = None, gains: PidGains | None = None, dt: float = 0.01):
        self.pid = PidController(params, gains, dt)

    def reset(self) -> None:
        self.pid.reset()

    def action(self, obs: np.ndarray, state: QuadState, target: np.ndarray, env: HoverEnv) -> np.ndarray:
        speeds = self.pid(state, target)
        return np.clip(rpm_to_action(speeds / RPM_TO_RADS, env.cfg), -1.0, 1.0)


def run_tracking(
    controller,
    trajectory: Trajectory,
    env_cfg: EnvConfig | None = None,
    seed: int = 0,
    params: QuadParams | None = None,
    setpoint_period: float = 0.02,
) -> TrackingLog:
    """Fly ``trajectory`` closed loop and log every control step.

    The setpoint is refreshed every ``setpoint_period`` seconds and held in
    between. Learned policies see ``p - setpoint`` in place of ``p``; the
    run stops early (``log.crashed``) if the tracking error leaves the
    environment's position bound.
    """
    env_cfg = env_cfg or EnvConfig()
    params = params or QuadParams()
    n_steps = int(round(trajectory.duration / env_cfg.control_dt))
    env = HoverEnv(params, replace(env_cfg, episode_steps=n_steps), RewardParams(), seed=seed)
    start = QuadState.hover(params, trajectory.start())
    if trajectory.takeoff_time > 0:
        start = QuadState(start.position, start.velocity, start.rotation, start.omega, np.zeros(4))
    env.target = trajectory.position(0.0)
    _, obs = env.reset(state=start)
    controller.reset()
    hold = max(1, int(round(setpoint_period / env_cfg.control_dt)))
    log = TrackingLog(dt=env_cfg.control_dt)

    for k in range(n_steps):
        t = k * env_cfg.control_dt
        if k % hold == 0:
            env.target = trajectory.position(t)
            obs = env.observe()
        a = controller.action(obs, env.state, env.target.copy(), env)
        res = env.step(a)
        t_next = (k + 1) * env_cfg.control_dt
        obs = res.observation
        if hasattr(controller, "after_step"):
            # test fixtures may overwrite the simulator state here
            controller.after_step(env, t_next)
            obs = env.observe()
        log.append(t_next, trajectory.position(t_next), env.state.position, env.state.velocity, a)
        if res.terminated:
            log.crashed = True
            break
    return log


@dataclass
class ControllerResult:
    name: str
    e: float
    e_xy: float
    crashed: bool
    peak_speed: float
    samples: int


@dataclass
class ComparisonReport:
    seed: int
    trajectory: Trajectory
    transient: float
    results: list[ControllerResult] = field(default_factory=list)

    def table(self) -> str:
        lines = [
            f"Tracking error on circle r={self.trajectory.radius} m, T={self.trajectory.period} s "
            f"(seed {self.seed}, first {self.transient} s excluded)",
            f"{'controller':<12}{'e [m]':>10}{'e_xy [m]':>10}{'crashed':>9}{'peak v':>9}",
        ]
        for r in self.results:
            lines.append(f"{r.name:<12}{r.e:>10.3f}{r.e_xy:>10.3f}{str(r.crashed):>9}{r.peak_speed:>9.2f}")
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["controller", "e", "e_xy", "crashed", "peak_speed", "samples", "seed"])
            for r in self.results:
                w.writerow([r.name, repr(r.e), repr(r.e_xy), int(r.crashed), repr(r.peak_speed), r.samples, self.seed])


def compare(
    controllers: dict,
    trajectory: Trajectory,
    env_cfg: EnvConfig | None = None,
    seed: int = 0,
    transient: float = 1.0,
    params: QuadParams | None = None,
) -> tuple[ComparisonReport, dict[str, TrackingLog]]:
    report = ComparisonReport(seed, trajectory, transient)
    logs = {}
    for name, ctrl in controllers.items():
        log = run_tracking(ctrl, trajectory, env_cfg, seed, params)
        e, e_xy = tracking_errors(log, transient)
        report.results.append(ControllerResult(name, e, e_xy, log.crashed, log.peak_speed(), len(log)))
        logs[name] = log
    return report, logs
