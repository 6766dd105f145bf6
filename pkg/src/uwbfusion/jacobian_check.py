"""Finite-difference validation of every analytic Jacobian in the filter."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .quaternion import quat_from_euler
from .ranging import default_requesters
from .sensors import (
    baro_jacobian,
    flow_jacobian,
    laser_jacobian,
    mag_jacobian,
    magnetic_reference,
    range_jacobian,
)
from .state import ERROR_DIM, StateEstimate
from .strapdown import ImuSample, transition_matrix

FD_STEP = 1e-6
DEFAULT_TOL = 1e-5
ABS_FLOOR = 1e-9


@dataclass(frozen=True)
class Case:
    state: StateEstimate
    target_attitude: np.ndarray
    requester: np.ndarray
    responder: np.ndarray
    imu: ImuSample
    dt: float
    m_ref: np.ndarray
    b0: float


def random_case(rng: np.random.Generator) -> Case:
    """A valid random linearization point (tilt within the laser guard, altitude above the flow guard)."""
    roll, pitch = rng.uniform(-1.0, 1.0, 2)
    att = quat_from_euler(roll, pitch, rng.uniform(-math.pi, math.pi))
    state = StateEstimate(
        attitude=att,
        velocity=rng.uniform(-2.0, 2.0, 3),
        position=np.r_[rng.uniform(-4.0, 4.0, 2), rng.uniform(0.3, 4.0)],
        gyro_bias=rng.normal(0.0, 0.02, 3),
    )
    target = quat_from_euler(*rng.uniform(-0.2, 0.2, 2), rng.uniform(-math.pi, math.pi))
    requester = default_requesters()[rng.integers(4)]
    responder = np.r_[rng.uniform(-0.7, 0.7, 2), rng.uniform(1.3, 1.8)]
    imu = ImuSample(rng.normal(0.0, 1.0, 3), np.array([0.0, 0.0, 9.81]) + rng.normal(0.0, 2.0, 3), 0.0)
    return Case(state, target, requester, responder, imu, float(rng.uniform(0.002, 0.02)),
                magnetic_reference(rng.uniform(-0.5, 0.5)), float(rng.uniform(-50.0, 50.0)))


# Reference models in extended precision. They are written independently of
# the production code so that the finite differences do not share its
# arithmetic, and the wider mantissa keeps the difference quotient's rounding
# floor far below the absolute tolerance.

_LD = np.longdouble


def _ld(v) -> np.ndarray:
    return np.array(v, dtype=_LD)


def _qmul(p, r):
    pw, px, py, pz = p
    rw, rx, ry, rz = r
    return _ld([pw * rw - px * rx - py * ry - pz * rz,
                pw * rx + px * rw + py * rz - pz * ry,
                pw * ry - px * rz + py * rw + pz * rx,
                pw * rz + px * ry - py * rx + pz * rw])


def _qexp(phi):
    a = np.sqrt(phi @ phi)
    if a == 0:
        return _ld([1, 0, 0, 0])
    return np.concatenate([[np.cos(a / 2)], np.sin(a / 2) * phi / a])


def _qlog(q):
    n = np.sqrt(q[1:] @ q[1:])
    if n == 0:
        return _ld([0, 0, 0])
    return 2 * np.arctan2(n, q[0]) * q[1:] / n


def _dcm(q):
    w, x, y, z = q / np.sqrt(q @ q)
    return _ld([[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


def _conj(q):
    return q * _ld([1, -1, -1, -1])


@dataclass(frozen=True)
class _RefState:
    q: np.ndarray
    v: np.ndarray
    p: np.ndarray
    b: np.ndarray

    @classmethod
    def of(cls, s: StateEstimate) -> "_RefState":
        return cls(_ld(s.attitude), _ld(s.velocity), _ld(s.position), _ld(s.gyro_bias))

    def shifted(self, k: int, h) -> "_RefState":
        e = np.zeros(3, dtype=_LD)
        e[k % 3] = h
        if k < 3:
            return _RefState(_qmul(_qexp(e), self.q), self.v, self.p, self.b)
        if k < 6:
            return _RefState(self.q, self.v + e, self.p, self.b)
        if k < 9:
            return _RefState(self.q, self.v, self.p + e, self.b)
        return _RefState(self.q, self.v, self.p, self.b + e)


def ref_range(c: Case):
    RM, ai, aj = _dcm(_ld(c.target_attitude)), _ld(c.requester), _ld(c.responder)

    def h(x: _RefState):
        d = x.p + _dcm(x.q) @ ai - RM @ aj
        return np.sqrt(d @ d)
    return h


def ref_flow(c: Case):
    return lambda x: (_dcm(x.q).T @ x.v)[:2] / x.p[2]


def ref_laser(c: Case):
    return lambda x: x.p[2] / _dcm(x.q)[2, 2]


def ref_baro(c: Case):
    b0 = _LD(c.b0)
    return lambda x: x.p[2] + b0


def ref_mag(c: Case):
    m = _ld(c.m_ref)
    return lambda x: _dcm(x.q).T @ m


def ref_propagated_error(c: Case):
    """Error of the propagated state as a function of the perturbed start state."""
    omega, f, dt = _ld(c.imu.omega), _ld(c.imu.accel), _LD(c.dt)
    g = _ld([0, 0, 9.81])

    def step(x: _RefState):
        q1 = _qmul(x.q, _qexp((omega - x.b) * dt))
        v1 = x.v + (0.5 * (_dcm(x.q) @ f + _dcm(q1) @ f) - g) * dt
        p1 = x.p + 0.5 * (x.v + v1) * dt
        return q1, v1, p1

    q_nom, v_nom, p_nom = step(_RefState.of(c.state))
    b_nom = _ld(c.state.gyro_bias)

    def h(x: _RefState):
        q1, v1, p1 = step(x)
        d_att = _qlog(_qmul(q1, _conj(q_nom)))
        return np.concatenate([d_att, v1 - v_nom, p1 - p_nom, x.b - b_nom])
    return h


def numeric_jacobian(fn, state: StateEstimate, step: float = FD_STEP) -> np.ndarray:
    """Central differences of a reference model over the error state, in extended precision."""
    x = _RefState.of(state)
    h = _LD(step)
    cols = [(np.atleast_1d(fn(x.shifted(k, h))) - np.atleast_1d(fn(x.shifted(k, -h)))) / (2 * h)
            for k in range(ERROR_DIM)]
    return np.column_stack(cols).astype(float)


# name -> (reference model factory, analytic Jacobian). Looked up at call time.
MODELS = {
    "range": (ref_range, lambda c: range_jacobian(c.state, c.target_attitude, c.requester, c.responder)),
    "flow": (ref_flow, lambda c: flow_jacobian(c.state)),
    "laser": (ref_laser, lambda c: laser_jacobian(c.state)),
    "baro": (ref_baro, lambda c: baro_jacobian(c.state)),
    "mag": (ref_mag, lambda c: mag_jacobian(c.state, c.m_ref)),
    "transition": (ref_propagated_error, lambda c: transition_matrix(c.state, c.imu, c.dt)),
}


@dataclass
class ModelReport:
    name: str
    trials: int = 0
    worst_ratio: float = 0.0  # max |a - n| / max(|n|, 1e-4)
    failures: int = 0

    @property
    def passed(self) -> bool:
        return self.failures == 0


@dataclass
class JacobianReport:
    models: list
    elapsed: float
    tol: float

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.models)

    def lines(self) -> list[str]:
        out = [f"{'model':<12} {'trials':>6} {'worst rel err':>14} {'fail':>5}"]
        for m in self.models:
            out.append(f"{m.name:<12} {m.trials:>6} {m.worst_ratio:14.3e} {m.failures:>5}")
        out.append(f"tolerance {self.tol:g}, {self.elapsed:.2f} s: {'PASS' if self.passed else 'FAIL'}")
        return out


def compare(analytic, numeric, tol: float = DEFAULT_TOL) -> tuple[bool, float]:
    a = np.atleast_2d(analytic)
    n = np.atleast_2d(numeric)
    if a.shape != n.shape:
        return False, math.inf
    diff = np.abs(a - n)
    ok = bool(np.all(diff <= np.maximum(tol * np.abs(n), ABS_FLOOR)))
    ratio = float(np.max(diff / np.maximum(np.abs(n), 1e-4)))
    return ok, ratio


def check_jacobians(trials: int = 1000, tol: float = DEFAULT_TOL, seed: int = 0,
                    models: dict | None = None) -> JacobianReport:
    models = MODELS if models is None else models
    rng = np.random.default_rng(seed)
    reports = {name: ModelReport(name) for name in models}
    start = time.perf_counter()
    for _ in range(max(1, trials)):
        case = random_case(rng)
        for name, (model, analytic) in models.items():
            ok, ratio = compare(analytic(case), numeric_jacobian(model(case), case.state), tol)
            rep = reports[name]
            rep.trials += 1
            rep.worst_ratio = max(rep.worst_ratio, ratio)
            rep.failures += not ok
    return JacobianReport(list(reports.values()), time.perf_counter() - start, tol)
