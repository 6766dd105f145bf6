"""Two-way time-of-flight ranging and the antenna switching schedule.

Transactions keep requester-clock timestamps as exact rationals: a flight time
of a few nanoseconds added to a clock reading of hundreds of seconds would
otherwise lose micrometres to float rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np

from .quaternion import quat_multiply, quat_to_dcm, yaw_quat
from .sensors import RangeObservation, TargetAttitude

SPEED_OF_LIGHT = 299792458  # m/s
_C = Fraction(SPEED_OF_LIGHT)

# Antennae on the MAV sit at the corners of a 0.55 m square.
REQUESTER_SQUARE = 0.55


class ClockFault(ValueError):
    pass


def _vec3_array(rows) -> np.ndarray:
    a = np.array(rows, dtype=float).reshape(-1, 3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NodeGeometry:
    """Antenna offsets and calibrated per-pair cable biases.

    ``requesters`` are offsets in the MAV body frame, ``responders`` in the
    target frame. ``pair_bias[i, j]`` is the bias the ranging firmware subtracts
    for requester ``i`` and responder ``j``. Radio indices say which antennae
    share a physical transceiver.
    """

    requesters: np.ndarray
    responders: np.ndarray
    pair_bias: np.ndarray | None = None
    requester_radio: tuple[int, ...] | None = None
    responder_radio: tuple[int, ...] | None = None

    def __post_init__(self):
        req = _vec3_array(self.requesters)
        rsp = _vec3_array(self.responders)
        if len(req) < 1 or len(rsp) < 1:
            raise ValueError("geometry needs at least one requester and one responder")
        if not (np.isfinite(req).all() and np.isfinite(rsp).all()):
            raise ValueError("antenna offsets must be finite")
        bias = np.zeros((len(req), len(rsp))) if self.pair_bias is None else np.array(self.pair_bias, dtype=float)
        if bias.shape != (len(req), len(rsp)):
            raise ValueError(f"pair_bias shape {bias.shape} does not match {len(req)}x{len(rsp)} pairs")
        bias.setflags(write=False)
        req_radio = tuple(range(len(req))) if self.requester_radio is None else tuple(self.requester_radio)
        rsp_radio = tuple(range(len(rsp))) if self.responder_radio is None else tuple(self.responder_radio)
        if len(req_radio) != len(req) or len(rsp_radio) != len(rsp):
            raise ValueError("radio assignment length does not match antenna count")
        object.__setattr__(self, "requesters", req)
        object.__setattr__(self, "responders", rsp)
        object.__setattr__(self, "pair_bias", bias)
        object.__setattr__(self, "requester_radio", req_radio)
        object.__setattr__(self, "responder_radio", rsp_radio)

    @property
    def n_pairs(self) -> int:
        return len(self.requesters) * len(self.responders)

    @property
    def yaw_observable(self) -> bool:
        # Needs several requesters and at least two responders.
        return len(self.requesters) >= 2 and len(self.responders) >= 2

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(len(self.requesters)) for j in range(len(self.responders))]


def default_requesters(side: float = REQUESTER_SQUARE) -> np.ndarray:
    h = 0.5 * side
    # Antennae 0/1 share radio 0, 2/3 share radio 1 (diagonal pairs).
    return np.array([[h, h, 0.0], [-h, -h, 0.0], [h, -h, 0.0], [-h, h, 0.0]])


def default_geometry(responders, side: float = REQUESTER_SQUARE, pair_bias=None) -> NodeGeometry:
    return NodeGeometry(
        requesters=default_requesters(side),
        responders=responders,
        pair_bias=pair_bias,
        requester_radio=(0, 0, 1, 1),
        responder_radio=tuple(range(len(np.reshape(responders, (-1, 3))))),
    )


@dataclass(frozen=True)
class RangingSchedule:
    """Ordered steps of simultaneous ``(requester, responder)`` transactions."""

    steps: tuple[tuple[tuple[int, int], ...], ...]
    step_period: float = 0.029  # s
    delta: float = 200e-6  # responder turnaround, s

    @property
    def cycle_period(self) -> float:
        return self.step_period * len(self.steps)

    @property
    def pairs_per_cycle(self) -> int:
        return sum(len(s) for s in self.steps)

    def validate(self, geometry: NodeGeometry):
        seen = []
        for k, step in enumerate(self.steps):
            req_radios = [geometry.requester_radio[i] for i, _ in step]
            rsp_radios = [geometry.responder_radio[j] for _, j in step]
            if len(set(req_radios)) != len(req_radios) or len(set(rsp_radios)) != len(rsp_radios):
                raise ValueError(f"step {k} uses a radio twice: {step}")
            seen.extend(step)
        if sorted(seen) != sorted(geometry.pairs()):
            raise ValueError("schedule must cover every pair exactly once per cycle")


def default_schedule(step_period: float = 0.029, delta: float = 200e-6) -> RangingSchedule:
    """Four steps of two concurrent pairs: eight ranges per 0.116 s cycle."""
    steps = (
        ((0, 0), (2, 1)),
        ((0, 1), (2, 0)),
        ((1, 0), (3, 1)),
        ((1, 1), (3, 0)),
    )
    return RangingSchedule(steps=steps, step_period=step_period, delta=delta)


def build_schedule(geometry: NodeGeometry, step_period: float = 0.029,
                   delta: float = 200e-6) -> RangingSchedule:
    """Greedy round-robin packing of all pairs into radio-disjoint steps."""
    remaining = geometry.pairs()
    steps = []
    while remaining:
        step, used_q, used_m = [], set(), set()
        for i, j in list(remaining):
            rq, rm = geometry.requester_radio[i], geometry.responder_radio[j]
            if rq not in used_q and rm not in used_m:
                step.append((i, j))
                used_q.add(rq)
                used_m.add(rm)
                remaining.remove((i, j))
        steps.append(tuple(step))
    return RangingSchedule(steps=tuple(steps), step_period=step_period, delta=delta)


@dataclass(frozen=True)
class RangingNoise:
    sigma: float = 0.02  # m
    dropout: float = 0.0  # probability per scheduled transaction
    # Non-line-of-sight spikes: positive uniform error in [0, nlos_max].
    nlos_probability: float = 0.0
    nlos_max: float = 0.5  # m
    # Spread of the true cable bias around its calibrated value.
    pair_bias_error_sigma: float = 0.0  # m

    def __post_init__(self):
        if self.sigma < 0 or not 0 <= self.dropout <= 1 or not 0 <= self.nlos_probability <= 1:
            raise ValueError("invalid ranging noise parameters")


@dataclass(frozen=True)
class TwtofTransaction:
    t1: Fraction  # request sent, requester clock
    t2: Fraction  # response received, requester clock
    delta: Fraction
    requester_id: int
    responder_id: int


def twtof_distance(t1, t2, delta, bias):
    """Range from a two-way exchange: half the round trip minus turnaround, less cable bias."""
    flight = t2 - t1 - delta
    if flight < 0:
        raise ClockFault(f"negative time of flight {float(flight)!r} s")
    d = _C * flight / 2 - (Fraction(bias) if isinstance(flight, Fraction) else bias)
    return float(d)


def antenna_distance(mav_position, mav_attitude, target_position, target_attitude, a_i, a_j) -> float:
    p_i = np.asarray(mav_position) + quat_to_dcm(mav_attitude, check=False) @ np.asarray(a_i)
    p_j = np.asarray(target_position) + quat_to_dcm(target_attitude, check=False) @ np.asarray(a_j)
    return float(np.linalg.norm(p_i - p_j))


def synthesize_transaction(mav_position, mav_attitude, target_position, target_attitude,
                           pair: tuple[int, int], geometry: NodeGeometry, schedule: RangingSchedule,
                           t1: float, noise: RangingNoise, rng: np.random.Generator,
                           true_bias: float | None = None) -> TwtofTransaction | None:
    """Timestamps a requester would record for one exchange, or None on dropout.

    ``true_bias`` is the hardware cable bias; it defaults to the calibrated
    value so decoding with ``geometry.pair_bias`` recovers the geometric range.
    """
    i, j = pair
    # Fixed draw order keeps streams aligned across noise settings.
    u_drop, n, u_nlos, u_mag = rng.random(), rng.standard_normal(), rng.random(), rng.random()
    if u_drop < noise.dropout:
        return None
    d = antenna_distance(mav_position, mav_attitude, target_position, target_attitude,
                         geometry.requesters[i], geometry.responders[j])
    err = noise.sigma * n
    if u_nlos < noise.nlos_probability:
        err += noise.nlos_max * u_mag
    bias = geometry.pair_bias[i, j] if true_bias is None else true_bias
    one_way = max(0.0, d + err + bias)
    start = Fraction(t1)
    delta = Fraction(schedule.delta)
    if one_way == 0.0:
        t2 = start + delta
    else:
        t2 = start + delta + 2 * Fraction(one_way) / _C
    return TwtofTransaction(t1=start, t2=t2, delta=delta, requester_id=i, responder_id=j)


@dataclass
class RangingSimulator:
    """Stateful slot generator: call ``advance`` with increasing end times."""

    geometry: NodeGeometry
    schedule: RangingSchedule
    noise: RangingNoise
    rng: np.random.Generator
    payload_hz: float = 10.0
    payload_yaw_sigma: float = 0.0
    start_time: float = 0.0
    true_bias: np.ndarray | None = None
    _slot: int = field(default=0, init=False)
    _payload_index: int = field(default=-1, init=False)
    _payload: np.ndarray | None = field(default=None, init=False)
    scheduled: int = field(default=0, init=False)
    dropped: int = field(default=0, init=False)

    def __post_init__(self):
        self.schedule.validate(self.geometry)
        if self.true_bias is None:
            self.true_bias = np.array(self.geometry.pair_bias, dtype=float)

    def slot_time(self, k: int) -> float:
        return self.start_time + k * self.schedule.step_period

    def _refresh_payload(self, truth, t: float):
        """Return a new payload if the target sampled its attitude since the last one."""
        index = math.floor((t - self.start_time) * self.payload_hz + 1e-9)
        if index <= self._payload_index:
            return None
        self._payload_index = index
        t_sample = self.start_time + index / self.payload_hz
        att = np.array(truth.target_attitude(t_sample), dtype=float)
        if self.payload_yaw_sigma > 0:
            att = quat_multiply(yaw_quat(self.payload_yaw_sigma * self.rng.standard_normal()), att)
        self._payload = att
        return TargetAttitude(attitude=att, timestamp=t)

    def advance(self, truth, t_end: float) -> Iterator[object]:
        """Yield payload refreshes and range observations for slots with time <= ``t_end``."""
        n_steps = len(self.schedule.steps)
        while True:
            t = self.slot_time(self._slot)
            if t > t_end + 1e-12:
                return
            sample = truth.sample(t)
            step = self.schedule.steps[self._slot % n_steps]
            delivered = []
            for pair in step:
                self.scheduled += 1
                i, j = pair
                tx = synthesize_transaction(
                    sample.mav_position, sample.mav_attitude, sample.target_position,
                    sample.target_attitude, pair, self.geometry, self.schedule, t,
                    self.noise, self.rng, true_bias=float(self.true_bias[i, j]),
                )
                if tx is None:
                    self.dropped += 1
                    continue
                delivered.append(tx)
            if delivered:
                payload = self._refresh_payload(truth, t)
                if payload is not None:
                    yield payload
                for tx in delivered:
                    d = twtof_distance(tx.t1, tx.t2, tx.delta, self.geometry.pair_bias[tx.requester_id, tx.responder_id])
                    yield RangeObservation(tx.requester_id, tx.responder_id, d, t, self._payload)
            self._slot += 1


def run_schedule(truth, geometry: NodeGeometry, schedule: RangingSchedule, noise: RangingNoise,
                 duration: float, rng: np.random.Generator, payload_hz: float = 10.0,
                 true_bias=None) -> list:
    """Full time-ordered ranging stream over ``[0, duration)``."""
    sim = RangingSimulator(geometry, schedule, noise, rng, payload_hz=payload_hz, true_bias=true_bias)
    n_steps = int(math.floor(duration / schedule.step_period + 1e-9))
    if n_steps == 0:
        return []
    return list(sim.advance(truth, sim.slot_time(n_steps - 1)))


def draw_true_bias(geometry: NodeGeometry, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return np.array(geometry.pair_bias) + sigma * rng.standard_normal(geometry.pair_bias.shape)
