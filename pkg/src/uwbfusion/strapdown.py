"""Strapdown time propagation of the nominal state and error covariance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quaternion import quat_multiply, quat_to_dcm, renormalize, right_jacobian, rotvec_to_quat, skew
from .state import ATT, BIAS, ERROR_DIM, POS, VEL, StateEstimate, symmetrize

GRAVITY = 9.81  # m/s^2
GRAVITY_VECTOR = np.array([0.0, 0.0, GRAVITY])
MAX_DT = 0.1  # s
MAX_RATE = 35.0  # rad/s
MAX_ACCEL = 16.0 * GRAVITY


class ClockError(ValueError):
    pass


@dataclass(frozen=True)
class ImuSample:
    """Gyro rate and specific force in the body frame.

    A sample stamped ``t`` represents the mean over the interval ending at ``t``.
    """

    omega: np.ndarray
    accel: np.ndarray
    timestamp: float

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float))

    def in_range(self) -> bool:
        return (float(np.linalg.norm(self.omega)) <= MAX_RATE
                and float(np.linalg.norm(self.accel)) <= MAX_ACCEL)


@dataclass(frozen=True)
class ProcessNoiseConfig:
    """Continuous-time noise intensities (standard deviation per sqrt(s))."""

    gyro_density: float = 0.005  # rad/s/sqrt(Hz)
    accel_density: float = 0.05  # m/s^2/sqrt(Hz)
    gyro_bias_walk: float = 1e-4  # rad/s^2/sqrt(Hz)
    # Unmodelled target acceleration lumped into velocity noise.
    target_motion_accel: float = 0.3  # m/s^2/sqrt(Hz)

    def __post_init__(self):
        for name in ("gyro_density", "accel_density", "gyro_bias_walk", "target_motion_accel"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def matrix(self) -> np.ndarray:
        q = np.zeros(ERROR_DIM)
        q[ATT] = self.gyro_density ** 2
        q[VEL] = self.accel_density ** 2 + self.target_motion_accel ** 2
        q[BIAS] = self.gyro_bias_walk ** 2
        return np.diag(q)


def _nominal_step(state: StateEstimate, omega, accel, dt: float):
    """Advance the nominal state; returns (attitude, velocity, position, R0, R1, Jr)."""
    rate = omega - state.gyro_bias
    phi = rate * dt
    R0 = quat_to_dcm(state.attitude, check=False)
    attitude = renormalize(quat_multiply(state.attitude, rotvec_to_quat(phi)))
    R1 = quat_to_dcm(attitude, check=False)
    # Trapezoidal rotation of the specific force over the interval.
    accel_world = 0.5 * (R0 @ accel + R1 @ accel) - GRAVITY_VECTOR
    velocity = state.velocity + accel_world * dt
    position = state.position + 0.5 * (state.velocity + velocity) * dt
    return attitude, velocity, position, R0, R1, phi


def transition_matrix(state: StateEstimate, imu: ImuSample, dt: float) -> np.ndarray:
    """Exact error-state Jacobian of one ``propagate`` step."""
    rate = imu.omega - state.gyro_bias
    phi = rate * dt
    R0 = quat_to_dcm(state.attitude, check=False)
    R1 = R0 @ quat_to_dcm(rotvec_to_quat(phi), check=False)
    return _transition(R0, R1, imu.accel, phi, dt)


def _transition(R0, R1, accel, phi, dt) -> np.ndarray:
    F = np.eye(ERROR_DIM)
    att_bias = -dt * (R1 @ right_jacobian(phi))
    f0 = skew(R0 @ accel)
    f1 = skew(R1 @ accel)
    vel_att = -0.5 * dt * (f0 + f1)
    vel_bias = -0.5 * dt * (f1 @ att_bias)
    F[ATT, BIAS] = att_bias
    F[VEL, ATT] = vel_att
    F[VEL, BIAS] = vel_bias
    F[POS, VEL] = dt * np.eye(3)
    F[POS, ATT] = 0.5 * dt * vel_att
    F[POS, BIAS] = 0.5 * dt * vel_bias
    return F


def propagate(state: StateEstimate, cov, imu: ImuSample, dt: float,
              noise: ProcessNoiseConfig) -> tuple[StateEstimate, np.ndarray]:
    """One strapdown step of length ``dt`` using a single IMU sample."""
    if not (dt > 0.0 and dt <= MAX_DT):
        raise ClockError(f"invalid propagation interval dt={dt!r}")
    attitude, velocity, position, R0, R1, phi = _nominal_step(state, imu.omega, imu.accel, dt)
    F = _transition(R0, R1, imu.accel, phi, dt)
    P = symmetrize(F @ cov @ F.T + noise.matrix() * dt)
    new_state = StateEstimate(
        attitude=attitude, velocity=velocity, position=position,
        gyro_bias=state.gyro_bias, timestamp=state.timestamp + dt,
    )
    return new_state, P
