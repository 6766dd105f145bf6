"""Measurement models and their error-state Jacobians."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quaternion import cross, quat_to_dcm, skew
from .state import ATT, ERROR_DIM, POS, POS_Z, VEL, StateEstimate

MIN_FLOW_ALTITUDE = 0.1  # m
MIN_LASER_COSINE = 0.2
MIN_RANGE = 1e-6  # m
E3 = np.array([0.0, 0.0, 1.0])


class MeasurementGuardError(ValueError):
    """A measurement model was evaluated outside its valid domain."""


@dataclass(frozen=True)
class RangeObservation:
    requester_id: int
    responder_id: int
    distance: float
    timestamp: float
    # Target attitude carried in the response message, if any.
    target_attitude: np.ndarray | None = None


@dataclass(frozen=True)
class TargetAttitude:
    """Target orientation relayed over the ranging link."""

    attitude: np.ndarray
    timestamp: float


@dataclass(frozen=True)
class FlowObservation:
    v_fx: float
    v_fy: float
    timestamp: float


@dataclass(frozen=True)
class LaserObservation:
    l: float
    timestamp: float


@dataclass(frozen=True)
class BaroObservation:
    b: float
    timestamp: float


@dataclass(frozen=True)
class MagObservation:
    m: np.ndarray
    timestamp: float

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        n = float(np.linalg.norm(m))
        if not n > 0.0:
            raise ValueError("magnetometer reading has zero norm")
        object.__setattr__(self, "m", m / n)


def magnetic_reference(declination: float = 0.0) -> np.ndarray:
    """Unit horizontal field direction, rotated from +x by ``declination`` rad."""
    return np.array([math.cos(declination), math.sin(declination), 0.0])


def _range_vector(state: StateEstimate, target_attitude, a_i, a_j):
    R = quat_to_dcm(state.attitude, check=False)
    RM = quat_to_dcm(target_attitude, check=False)
    lever = R @ np.asarray(a_i, dtype=float)
    return state.position + lever - RM @ np.asarray(a_j, dtype=float), lever


def predict_range(state: StateEstimate, target_attitude, a_i_Q, a_j_M) -> float:
    """Distance between requester antenna ``a_i_Q`` and responder antenna ``a_j_M``."""
    d, _ = _range_vector(state, target_attitude, a_i_Q, a_j_M)
    return float(np.linalg.norm(d))


def range_jacobian(state: StateEstimate, target_attitude, a_i_Q, a_j_M) -> np.ndarray:
    d, lever = _range_vector(state, target_attitude, a_i_Q, a_j_M)
    r = float(np.linalg.norm(d))
    if r <= MIN_RANGE:
        raise MeasurementGuardError(f"range {r:.3g} m too small to linearize")
    u = d / r
    H = np.zeros(ERROR_DIM)
    H[ATT] = cross(lever, u)
    H[POS] = u
    return H


def _check_altitude(qz: float):
    if not qz >= MIN_FLOW_ALTITUDE:
        raise MeasurementGuardError(f"altitude {qz:.3g} m below flow guard")


def predict_flow(state: StateEstimate) -> np.ndarray:
    """Translational flow ``(v_fx, v_fy)``: body-frame velocity over altitude."""
    qz = float(state.position[2])
    _check_altitude(qz)
    R = quat_to_dcm(state.attitude, check=False)
    return (R.T @ state.velocity)[:2] / qz


def flow_jacobian(state: StateEstimate) -> np.ndarray:
    qz = float(state.position[2])
    _check_altitude(qz)
    Rt = quat_to_dcm(state.attitude, check=False).T
    flow = (Rt @ state.velocity)[:2] / qz
    H = np.zeros((2, ERROR_DIM))
    H[:, ATT] = (Rt @ skew(state.velocity))[:2] / qz
    H[:, VEL] = Rt[:2] / qz
    H[:, POS_Z] = -flow / qz
    return H


def laser_cosine(attitude) -> float:
    """Cosine between body and inertial vertical axes."""
    w, x, y, z = attitude
    return w * w - x * x - y * y + z * z


def _check_tilt(c: float):
    if not c > MIN_LASER_COSINE:
        raise MeasurementGuardError(f"tilt cosine {c:.3g} below laser guard")


def predict_laser(state: StateEstimate) -> float:
    c = laser_cosine(state.attitude)
    _check_tilt(c)
    return float(state.position[2]) / c


def laser_jacobian(state: StateEstimate) -> np.ndarray:
    c = laser_cosine(state.attitude)
    _check_tilt(c)
    r = quat_to_dcm(state.attitude, check=False)[:, 2]
    qz = float(state.position[2])
    H = np.zeros(ERROR_DIM)
    H[ATT] = -qz / (c * c) * cross(r, E3)
    H[POS_Z] = 1.0 / c
    return H


def predict_baro(state: StateEstimate, b0: float) -> float:
    return float(state.position[2]) + b0


def baro_jacobian(state: StateEstimate) -> np.ndarray:
    H = np.zeros(ERROR_DIM)
    H[POS_Z] = 1.0
    return H


def predict_mag(state: StateEstimate, m_ref) -> np.ndarray:
    """Reference field direction expressed in the body frame."""
    return quat_to_dcm(state.attitude, check=False).T @ np.asarray(m_ref, dtype=float)


def mag_jacobian(state: StateEstimate, m_ref) -> np.ndarray:
    Rt = quat_to_dcm(state.attitude, check=False).T
    H = np.zeros((3, ERROR_DIM))
    H[:, ATT] = Rt @ skew(m_ref)
    return H
