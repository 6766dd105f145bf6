"""Filter state and error-state covariance layout.

The nominal state holds the full attitude quaternion. The covariance is over a
12-dimensional error state ordered ``[attitude, velocity, position, gyro_bias]``.
The attitude error is a world-frame rotation vector: the true attitude is
``Exp(dtheta) * estimate``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .quaternion import IDENTITY, is_unit, quat_multiply, renormalize, rotvec_to_quat

ERROR_DIM = 12
ATT = slice(0, 3)
VEL = slice(3, 6)
POS = slice(6, 9)
BIAS = slice(9, 12)
# Index of the altitude component in the error state.
POS_Z = 8

MAX_GYRO_BIAS = 0.5  # rad/s


def _frozen(v, n: int) -> np.ndarray:
    a = np.array(v, dtype=float).reshape(n)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateEstimate:
    """Nominal relative-navigation state.

    ``velocity`` and ``position`` are the MAV's motion relative to the target,
    expressed in the inertial frame.
    """

    attitude: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "attitude", _frozen(self.attitude, 4))
        object.__setattr__(self, "velocity", _frozen(self.velocity, 3))
        object.__setattr__(self, "position", _frozen(self.position, 3))
        object.__setattr__(self, "gyro_bias", _frozen(self.gyro_bias, 3))

    def replace(self, **changes) -> "StateEstimate":
        return replace(self, **changes)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.attitude).all() and np.isfinite(self.velocity).all()
                    and np.isfinite(self.position).all() and np.isfinite(self.gyro_bias).all()
                    and np.isfinite(self.timestamp))

    def is_healthy(self) -> bool:
        return (self.is_finite() and is_unit(self.attitude)
                and float(np.linalg.norm(self.gyro_bias)) <= MAX_GYRO_BIAS)


def inject_error(state: StateEstimate, dx) -> StateEstimate:
    """Fold an error-state correction into the nominal state."""
    dx = np.asarray(dx, dtype=float)
    attitude = renormalize(quat_multiply(rotvec_to_quat(dx[ATT]), state.attitude))
    return replace(
        state,
        attitude=attitude,
        velocity=state.velocity + dx[VEL],
        position=state.position + dx[POS],
        gyro_bias=state.gyro_bias + dx[BIAS],
    )


def symmetrize(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return 0.5 * (P + P.T)


def initial_covariance(sigma_attitude, sigma_velocity, sigma_position, sigma_bias) -> np.ndarray:
    """Diagonal covariance from per-block standard deviations (scalar or 3-vector)."""
    d = np.concatenate([
        np.broadcast_to(np.asarray(s, dtype=float), (3,))
        for s in (sigma_attitude, sigma_velocity, sigma_position, sigma_bias)
    ])
    return np.diag(d ** 2)


def covariance_ok(P, rel_tol: float = 1e-9) -> bool:
    """Symmetric, finite and positive semidefinite within relative tolerances."""
    P = np.asarray(P, dtype=float)
    if not np.isfinite(P).all():
        return False
    scale = float(np.max(np.abs(P)))
    if float(np.max(np.abs(P - P.T))) > rel_tol * max(scale, 1e-300):
        return False
    return float(np.linalg.eigvalsh(symmetrize(P))[0]) >= -rel_tol * float(np.trace(P))
