"""Cascaded PID baseline: position -> velocity -> attitude -> body rate -> motors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import QuadParams, QuadState


@dataclass(frozen=True)
class PidGains:
    pos_p: float = 2.0
    pos_i: float = 0.0
    pos_d: float = 0.0
    vel_p: float = 3.5
    vel_i: float = 1.5
    vel_d: float = 0.0
    att_p: float = 14.0
    att_i: float = 0.0
    att_d: float = 0.0
    rate_p: float = 35.0
    rate_i: float = 0.0
    rate_d: float = 1.6
    yaw_att_p: float = 0.0
    yaw_rate_p: float = 0.0
    pos_i_limit: float = 0.5
    vel_i_limit: float = 2.0
    att_i_limit: float = 0.5
    rate_i_limit: float = 1.0
    max_speed: float = 2.5
    max_accel: float = 8.0
    max_tilt: float = 0.6
    max_rate: float = 12.0
    max_yaw_torque: float = 5e-9

    def __post_init__(self):
        for name, value in vars(self).items():
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"gain {name} must be finite and >= 0, got {value!r}")
        for name in ("pos_i_limit", "vel_i_limit", "att_i_limit", "rate_i_limit",
                     "max_speed", "max_accel", "max_tilt", "max_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"clamp {name} must be positive")


@dataclass
class PidState:
    pos_int: np.ndarray = field(default_factory=lambda: np.zeros(3))
    vel_int: np.ndarray = field(default_factory=lambda: np.zeros(3))
    att_int: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rate_int: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_pos_err: np.ndarray | None = None
    prev_vel_err: np.ndarray | None = None
    prev_att_err: np.ndarray | None = None
    prev_rate_err: np.ndarray | None = None
    saturated: bool = False


def _vee(M: np.ndarray) -> np.ndarray:
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def _clip_norm(x: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(x))
    return x if n <= limit else x * (limit / n)


def _desired_rotation(thrust_dir: np.ndarray, yaw: float) -> np.ndarray:
    z = thrust_dir / np.linalg.norm(thrust_dir)
    heading = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    y = np.cross(z, heading)
    ny = np.linalg.norm(y)
    if ny < 1e-9:
        y = np.cross(z, np.array([1.0, 0.0, 0.0]))
        ny = np.linalg.norm(y)
    y /= ny
    x = np.cross(y, z)
    return np.column_stack([x, y, z])


def _pid(err, prev, integ, kp, ki, kd, limit, dt):
    integ[...] = np.clip(integ + err * dt, -limit, limit)
    deriv = np.zeros_like(err) if prev is None else (err - prev) / dt
    return kp * err + ki * integ + kd * deriv


def mix_to_motors(thrust: float, torque, params: QuadParams) -> tuple[np.ndarray, bool]:
    """Invert the rotor allocation for squared speeds.

    Returns rotor speeds in rad/s and whether any rotor was floored at zero
    or clipped at ``omega_max``.
    """
    if thrust < 0:
        raise ValueError("thrust must be non-negative")
    tx, ty, tz = (float(t) for t in torque)
    kf, arm, cd = params.k_f, params.arm_length, params.c_d
    base = thrust / (4.0 * kf)
    rx = tx / (2.0 * arm * kf)
    ry = ty / (2.0 * arm * kf)
    rz = tz / (4.0 * cd * kf) if cd > 0 else 0.0
    diff = np.array([-ry - rz, rx + rz, ry - rz, -rx + rz])
    sq = base + diff
    max_sq = params.omega_max**2
    tol = 1e-12 * max_sq
    saturated = bool(np.any(sq < -tol) or np.any(sq > max_sq + tol))
    if thrust == 0.0:
        # torque without collective thrust cannot be produced by non-negative squares
        return np.zeros(4), saturated or bool(np.any(diff != 0))
    return np.sqrt(np.clip(sq, 0.0, max_sq)), saturated


def pid_control(
    state: QuadState,
    target,
    gains: PidGains,
    pid_state: PidState,
    dt: float,
    params: QuadParams,
    yaw: float = 0.0,
) -> np.ndarray:
    """One control update. Mutates ``pid_state``; returns rotor setpoints (rad/s)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = float(np.linalg.norm(params.g))
    R = state.rotation

    pos_err = np.asarray(target, dtype=float) - state.position
    v_cmd = _pid(pos_err, pid_state.prev_pos_err, pid_state.pos_int,
                 gains.pos_p, gains.pos_i, gains.pos_d, gains.pos_i_limit, dt)
    v_cmd = _clip_norm(v_cmd, gains.max_speed)

    vel_err = v_cmd - state.velocity
    acc = _pid(vel_err, pid_state.prev_vel_err, pid_state.vel_int,
               gains.vel_p, gains.vel_i, gains.vel_d, gains.vel_i_limit, dt)
    acc = _clip_norm(acc, gains.max_accel)

    # small-angle tilt from horizontal acceleration in the heading frame
    cy, sy = math.cos(yaw), math.sin(yaw)
    a_fwd = cy * acc[0] + sy * acc[1]
    a_left = -sy * acc[0] + cy * acc[1]
    pitch_d = float(np.clip(a_fwd / g, -gains.max_tilt, gains.max_tilt))
    roll_d = float(np.clip(-a_left / g, -gains.max_tilt, gains.max_tilt))
    cr, sr = math.cos(roll_d), math.sin(roll_d)
    cp, sp = math.cos(pitch_d), math.sin(pitch_d)
    thrust_dir = np.array([cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr])
    R_d = _desired_rotation(thrust_dir, yaw)

    tilt_cos = max(float(R[2, 2]), 0.5)
    thrust = params.mass * (g + acc[2]) / tilt_cos if R[2, 2] > 0 else params.mass * g
    thrust = float(np.clip(thrust, 0.0, 4.0 * params.k_f * params.omega_max**2))

    att_err = -0.5 * _vee(R_d.T @ R - R.T @ R_d)
    att_gain = np.array([gains.att_p, gains.att_p, gains.yaw_att_p])
    rate_d = _pid(att_err, pid_state.prev_att_err, pid_state.att_int,
                  att_gain, gains.att_i, gains.att_d, gains.att_i_limit, dt)
    rate_d = np.clip(rate_d, -gains.max_rate, gains.max_rate)

    rate_err = rate_d - state.omega
    rate_gain = np.array([gains.rate_p, gains.rate_p, gains.yaw_rate_p])
    ang_acc = _pid(rate_err, pid_state.prev_rate_err, pid_state.rate_int,
                   rate_gain, gains.rate_i, gains.rate_d, gains.rate_i_limit, dt)
    torque = params.inertia * ang_acc
    torque[2] = float(np.clip(torque[2], -gains.max_yaw_torque, gains.max_yaw_torque))

    pid_state.prev_pos_err = pos_err
    pid_state.prev_vel_err = vel_err
    pid_state.prev_att_err = att_err
    pid_state.prev_rate_err = rate_err
    speeds, pid_state.saturated = mix_to_motors(thrust, torque, params)
    return speeds


class PidController:
    """Stateful wrapper exposing the same call shape as a learned policy runner."""

    def __init__(self, params: QuadParams | None = None, gains: PidGains | None = None, dt: float = 0.01):
        self.params = params or QuadParams()
        self.gains = gains or PidGains()
        self.dt = dt
        self.state = PidState()

    def reset(self) -> None:
        self.state = PidState()

    def __call__(self, quad: QuadState, target, yaw: float = 0.0) -> np.ndarray:
        return pid_control(quad, target, self.gains, self.state, self.dt, self.params, yaw)
