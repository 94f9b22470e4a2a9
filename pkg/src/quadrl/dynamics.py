"""Rigid-body quadcopter dynamics with first-order motor lag.

Earth frame is z-up, ``R`` maps body to Earth, rotor speeds are in rad/s.
Motor layout follows the torque model::

    tau_x = L k_f (w2^2 - w4^2)
    tau_y = L k_f (w3^2 - w1^2)
    tau_z = C_d k_f (-w1^2 + w2^2 - w3^2 + w4^2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

RPM_TO_RADS = 2.0 * math.pi / 60.0

CRAZYFLIE_MASS = 0.033
CRAZYFLIE_MAX_RPM = 27102.0
THRUST_TO_WEIGHT = 1.9


def calibrated_thrust_coefficient(
    mass: float = CRAZYFLIE_MASS,
    gravity: float = 9.81,
    max_rpm: float = CRAZYFLIE_MAX_RPM,
    thrust_to_weight: float = THRUST_TO_WEIGHT,
) -> float:
    """Thrust coefficient giving ``thrust_to_weight`` at full rotor speed."""
    omega_max = max_rpm * RPM_TO_RADS
    return thrust_to_weight * mass * gravity / (4.0 * omega_max**2)


@dataclass(frozen=True)
class QuadParams:
    """Physical constants of the vehicle.

    Defaults are the Crazyflie 2.1 values with the thrust-upgrade kit. The
    tabulated thrust coefficient (0.0059) does not fit rad/s rotor speeds, so
    ``k_f`` is calibrated from the thrust-to-weight ratio instead; ``c_d`` is
    the yaw-torque-to-thrust ratio.
    """

    mass: float = CRAZYFLIE_MASS
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    arm_length: float = 0.028
    k_f: float = field(default_factory=calibrated_thrust_coefficient)
    c_d: float = 9.18e-7
    ixx: float = 16.57e-6
    iyy: float = 16.66e-6
    izz: float = 29.26e-6
    omega_max: float = CRAZYFLIE_MAX_RPM * RPM_TO_RADS
    motor_tau: float = 0.05

    def __post_init__(self):
        for name in ("mass", "arm_length", "k_f", "ixx", "iyy", "izz", "omega_max", "motor_tau"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if self.c_d < 0:
            raise ValueError(f"c_d must be non-negative, got {self.c_d!r}")
        if len(self.gravity) != 3:
            raise ValueError("gravity must be a 3-vector")

    @property
    def inertia(self) -> np.ndarray:
        return np.array([self.ixx, self.iyy, self.izz])

    @property
    def g(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)

    @property
    def hover_omega(self) -> float:
        """Rotor speed at which four equal rotors balance gravity."""
        return math.sqrt(self.mass * float(np.linalg.norm(self.g)) / (4.0 * self.k_f))


@dataclass(frozen=True)
class QuadState:
    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray
    omega: np.ndarray
    rotors: np.ndarray

    @classmethod
    def hover(cls, params: QuadParams, position=(0.0, 0.0, 0.0)) -> QuadState:
        return cls(
            position=np.array(position, dtype=float),
            velocity=np.zeros(3),
            rotation=np.eye(3),
            omega=np.zeros(3),
            rotors=np.full(4, params.hover_omega),
        )

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.position))
            and np.all(np.isfinite(self.velocity))
            and np.all(np.isfinite(self.rotation))
            and np.all(np.isfinite(self.omega))
            and np.all(np.isfinite(self.rotors))
        )


@dataclass(frozen=True)
class WrenchBody:
    thrust: float
    torque: np.ndarray


@dataclass(frozen=True)
class StateDerivative:
    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray
    omega: np.ndarray


class SimulationDiverged(FloatingPointError):
    """Raised when integration produces a non-finite state."""


def skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def euler_to_rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-Earth rotation for ZYX (yaw, pitch, roll) Euler angles."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle between ``R`` and the identity."""
    c = 0.5 * (float(np.trace(R)) - 1.0)
    return math.acos(min(1.0, max(-1.0, c)))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


def rotor_wrench(rotors, params: QuadParams) -> WrenchBody:
    """Total thrust and body torque produced by the four rotors."""
    w = np.asarray(rotors, dtype=float)
    if w.shape != (4,):
        raise ValueError(f"expected 4 rotor speeds, got shape {w.shape}")
    if np.any(w < 0):
        raise ValueError("rotor speeds must be non-negative")
    w2 = w * w
    kf = params.k_f
    torque = np.array(
        [
            params.arm_length * kf * (w2[1] - w2[3]),
            params.arm_length * kf * (w2[2] - w2[0]),
            params.c_d * kf * (-w2[0] + w2[1] - w2[2] + w2[3]),
        ]
    )
    return WrenchBody(thrust=kf * float(w2.sum()), torque=torque)


def motor_lag_step(rotors, setpoint, dt: float, tau: float, omega_max: float = math.inf) -> np.ndarray:
    """Advance the first-order rotor lag by ``dt`` (exact exponential update)."""
    if dt <= 0 or tau <= 0:
        raise ValueError("dt and tau must be positive")
    rotors = np.asarray(rotors, dtype=float)
    alpha = -math.expm1(-dt / tau)
    out = rotors + alpha * (np.asarray(setpoint, dtype=float) - rotors)
    return np.clip(out, 0.0, omega_max)


def _deriv(y: np.ndarray, thrust: float, torque: np.ndarray, J: np.ndarray, g: np.ndarray, mass: float) -> np.ndarray:
    # y = [p(3), v(3), R(9, row-major), w(3)]
    R = y[6:15].reshape(3, 3)
    w = y[15:18]
    dy = np.empty(18)
    dy[0:3] = y[3:6]
    dy[3:6] = g + R[:, 2] * (thrust / mass)
    dy[6:15] = (R @ skew(w)).ravel()
    Jw = J * w
    dy[15:18] = (np.cross(Jw, w) + torque) / J
    return dy


def dynamics_derivative(state: QuadState, wrench: WrenchBody, params: QuadParams) -> StateDerivative:
    """Time derivative of position, velocity, attitude and body rates."""
    y = pack(state)
    dy = _deriv(y, wrench.thrust, np.asarray(wrench.torque, dtype=float), params.inertia, params.g, params.mass)
    return StateDerivative(
        position=dy[0:3], velocity=dy[3:6], rotation=dy[6:15].reshape(3, 3), omega=dy[15:18]
    )


def pack(state: QuadState) -> np.ndarray:
    return np.concatenate(
        [state.position, state.velocity, np.asarray(state.rotation).ravel(), state.omega]
    ).astype(float)


def unpack(y: np.ndarray, rotors: np.ndarray) -> QuadState:
    return QuadState(
        position=y[0:3].copy(),
        velocity=y[3:6].copy(),
        rotation=y[6:15].reshape(3, 3).copy(),
        omega=y[15:18].copy(),
        rotors=np.asarray(rotors, dtype=float).copy(),
    )


@njit(cache=True)
def _deriv_kernel(y, thrust, tx, ty, tz, jx, jy, jz, gx, gy, gz, mass, out):
    wx, wy, wz = y[15], y[16], y[17]
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    a = thrust / mass
    out[3] = gx + y[8] * a
    out[4] = gy + y[11] * a
    out[5] = gz + y[14] * a
    # R @ skew(w), row by row
    for i in range(3):
        r0, r1, r2 = y[6 + 3 * i], y[7 + 3 * i], y[8 + 3 * i]
        out[6 + 3 * i] = r1 * wz - r2 * wy
        out[7 + 3 * i] = r2 * wx - r0 * wz
        out[8 + 3 * i] = r0 * wy - r1 * wx
    hx, hy, hz = jx * wx, jy * wy, jz * wz
    out[15] = (hy * wz - hz * wy + tx) / jx
    out[16] = (hz * wx - hx * wz + ty) / jy
    out[17] = (hx * wy - hy * wx + tz) / jz


@njit(cache=True)
def _advance_kernel(y, rotors, setpoint, dt, n_steps, p):
    # p = [mass, gx, gy, gz, L, k_f, c_d, jx, jy, jz, omega_max, motor_tau]
    mass, gx, gy, gz = p[0], p[1], p[2], p[3]
    arm, kf, cd = p[4], p[5], p[6]
    jx, jy, jz = p[7], p[8], p[9]
    wmax, tau = p[10], p[11]
    alpha = -np.expm1(-dt / tau)
    y = y.copy()
    w = rotors.copy()
    k1 = np.empty(18)
    k2 = np.empty(18)
    k3 = np.empty(18)
    k4 = np.empty(18)
    tmp = np.empty(18)
    for _ in range(n_steps):
        for i in range(4):
            w[i] = min(max(w[i] + alpha * (setpoint[i] - w[i]), 0.0), wmax)
        s0, s1, s2, s3 = w[0] * w[0], w[1] * w[1], w[2] * w[2], w[3] * w[3]
        thrust = kf * (s0 + s1 + s2 + s3)
        tx = arm * kf * (s1 - s3)
        ty = arm * kf * (s2 - s0)
        tz = cd * kf * (-s0 + s1 - s2 + s3)
        _deriv_kernel(y, thrust, tx, ty, tz, jx, jy, jz, gx, gy, gz, mass, k1)
        for i in range(18):
            tmp[i] = y[i] + 0.5 * dt * k1[i]
        _deriv_kernel(tmp, thrust, tx, ty, tz, jx, jy, jz, gx, gy, gz, mass, k2)
        for i in range(18):
            tmp[i] = y[i] + 0.5 * dt * k2[i]
        _deriv_kernel(tmp, thrust, tx, ty, tz, jx, jy, jz, gx, gy, gz, mass, k3)
        for i in range(18):
            tmp[i] = y[i] + dt * k3[i]
        _deriv_kernel(tmp, thrust, tx, ty, tz, jx, jy, jz, gx, gy, gz, mass, k4)
        for i in range(18):
            y[i] = y[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        u, _, vt = np.linalg.svd(y[6:15].reshape(3, 3).copy())
        q = u @ vt
        if np.linalg.det(q) < 0:
            u[:, 2] = -u[:, 2]
            q = u @ vt
        y[6:15] = q.ravel()
    return y, w


def param_vector(params: QuadParams) -> np.ndarray:
    g = params.g
    return np.array(
        [
            params.mass, g[0], g[1], g[2], params.arm_length, params.k_f, params.c_d,
            params.ixx, params.iyy, params.izz, params.omega_max, params.motor_tau,
        ]
    )


def advance(state: QuadState, setpoint, dt: float, n_steps: int, params: QuadParams) -> QuadState:
    """Run ``n_steps`` lag + RK4 substeps of length ``dt`` under a held setpoint."""
    if not (0 < dt <= 0.01):
        raise ValueError(f"dt must lie in (0, 0.01], got {dt!r}")
    setpoint = np.asarray(setpoint, dtype=float)
    if setpoint.shape != (4,):
        raise ValueError(f"expected 4 rotor setpoints, got shape {setpoint.shape}")
    if not (state.is_finite() and np.all(np.isfinite(setpoint))):
        raise SimulationDiverged("non-finite state or setpoint")
    y, rotors = _advance_kernel(
        pack(state), np.asarray(state.rotors, dtype=float), setpoint, float(dt), int(n_steps), param_vector(params)
    )
    if not np.all(np.isfinite(y)):
        raise SimulationDiverged("non-finite state after integration")
    return unpack(y, rotors)


def integrate_step(state: QuadState, setpoint, dt: float, params: QuadParams) -> QuadState:
    """Advance the vehicle by ``dt`` seconds toward rotor ``setpoint`` (rad/s).

    The rotor lag is applied first; the new rotor speeds are then held
    constant over one RK4 step of the rigid body, after which the attitude is
    projected back onto SO(3).
    """
    return advance(state, setpoint, dt, 1, params)


def with_rotors(state: QuadState, rotors) -> QuadState:
    return replace(state, rotors=np.asarray(rotors, dtype=float))
