"""Asynchronous error-state EKF: event dispatch, updates, gating, initialization."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import chi2

from .quaternion import quat_from_euler, quat_to_dcm
from .ranging import NodeGeometry
from .sensors import (
    BaroObservation,
    FlowObservation,
    LaserObservation,
    MagObservation,
    MeasurementGuardError,
    MIN_FLOW_ALTITUDE,
    MIN_LASER_COSINE,
    RangeObservation,
    TargetAttitude,
    laser_cosine,
    mag_jacobian,
    magnetic_reference,
    predict_mag,
    predict_range,
    range_jacobian,
)
from .state import ERROR_DIM, POS_Z, VEL, StateEstimate, covariance_ok, initial_covariance, inject_error, symmetrize
from .strapdown import ClockError, ImuSample, ProcessNoiseConfig, propagate

SENSOR_KINDS = ("imu", "mag", "range", "flow", "laser", "baro", "target_attitude")
_KIND_PRIORITY = {k: n for n, k in enumerate(SENSOR_KINDS)}
_PAYLOAD_KIND = {
    ImuSample: "imu",
    MagObservation: "mag",
    RangeObservation: "range",
    FlowObservation: "flow",
    LaserObservation: "laser",
    BaroObservation: "baro",
    TargetAttitude: "target_attitude",
}


class FilterError(RuntimeError):
    pass


@dataclass(frozen=True)
class SensorEvent:
    timestamp: float
    payload: object

    def __post_init__(self):
        if type(self.payload) not in _PAYLOAD_KIND:
            raise TypeError(f"unsupported payload {type(self.payload).__name__}")
        if not math.isfinite(self.timestamp):
            raise ValueError("event timestamp must be finite")

    @property
    def kind(self) -> str:
        return _PAYLOAD_KIND[type(self.payload)]

    def sort_key(self):
        # IMU first at equal timestamps so updates see the propagated state.
        return (self.timestamp, _KIND_PRIORITY[self.kind])


def make_event(payload) -> SensorEvent:
    return SensorEvent(payload.timestamp, payload)


@dataclass(frozen=True)
class MeasurementNoiseConfig:
    sigma_range: float = 0.02  # m
    sigma_flow: float = 0.05  # 1/s
    # Noise assigned to the estimate-derived vertical flow component.
    sigma_flow_z: float = 0.5  # 1/s
    sigma_laser: float = 0.02  # m
    sigma_baro: float = 0.5  # m
    sigma_mag: float = 0.05
    gate_probability: float = 0.999

    def __post_init__(self):
        for name in ("sigma_range", "sigma_flow", "sigma_flow_z", "sigma_laser", "sigma_baro", "sigma_mag"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.gate_probability <= 1:
            raise ValueError("gate_probability must be in (0, 1]")


@dataclass(frozen=True)
class FilterConfig:
    measurement: MeasurementNoiseConfig = field(default_factory=MeasurementNoiseConfig)
    process: ProcessNoiseConfig = field(default_factory=ProcessNoiseConfig)
    mag_declination: float = 0.0  # rad
    sigma_roll_pitch: float = 0.02  # rad
    sigma_yaw: float = 0.05  # rad
    sigma_velocity: float = 0.05  # m/s
    sigma_position: float = 0.05  # m
    sigma_gyro_bias: float = 0.005  # rad/s
    max_disorder: float = 0.05  # s
    init_window: float = 1.0  # s of stationary IMU

    @property
    def m_ref(self) -> np.ndarray:
        return magnetic_reference(self.mag_declination)


@dataclass
class StepOutcome:
    kind: str
    status: str  # predicted | accepted | gated | dropped | stored
    innovation: np.ndarray | None = None
    nis: float | None = None
    reason: str = ""


@dataclass
class FusionDiagnostics:
    accepted: Counter = field(default_factory=Counter)
    gated: Counter = field(default_factory=Counter)
    dropped: Counter = field(default_factory=Counter)
    last_innovation: dict = field(default_factory=dict)

    def record(self, outcome: StepOutcome):
        if outcome.status in ("accepted", "predicted", "stored"):
            self.accepted[outcome.kind] += 1
        elif outcome.status == "gated":
            self.gated[outcome.kind] += 1
        else:
            self.dropped[outcome.kind] += 1
        if outcome.innovation is not None:
            self.last_innovation[outcome.kind] = outcome.innovation

    def totals(self) -> tuple[int, int, int]:
        return sum(self.accepted.values()), sum(self.gated.values()), sum(self.dropped.values())


class RelativeEkf:
    """Single-writer relative-position filter consuming a time-ordered event stream."""

    def __init__(self, geometry: NodeGeometry, config: FilterConfig | None = None):
        self.geometry = geometry
        self.config = config or FilterConfig()
        self.state: StateEstimate | None = None
        self.cov: np.ndarray | None = None
        self.b0 = 0.0
        self.target_attitude: np.ndarray | None = None
        self.last_imu_time: float | None = None
        # Estimate right after the latest propagation. Pseudo-measurements are
        # built from it so that updates sharing a timestamp commute.
        self.prior: StateEstimate | None = None
        self.diagnostics = FusionDiagnostics()
        self._m_ref = self.config.m_ref
        p = self.config.measurement.gate_probability
        self._gate = {k: (math.inf if p >= 1 else float(chi2.ppf(p, k))) for k in (1, 2, 3)}

    @property
    def initialized(self) -> bool:
        return self.state is not None

    def reset(self, state: StateEstimate, cov, b0: float = 0.0, imu_time: float | None = None):
        self.state = state
        self.cov = symmetrize(cov)
        self.b0 = b0
        self.last_imu_time = state.timestamp if imu_time is None else imu_time
        self.prior = state

    def snapshot(self) -> tuple[StateEstimate, np.ndarray]:
        return self.state, self.cov.copy()

    # -- dispatch --------------------------------------------------------

    def step(self, event: SensorEvent) -> StepOutcome:
        if not self.initialized:
            raise FilterError("filter used before initialization")
        kind = event.kind
        p = event.payload
        if kind != "imu" and self.last_imu_time is not None and event.timestamp < self.last_imu_time - self.config.max_disorder:
            outcome = StepOutcome(kind, "dropped", reason="stale")
        else:
            try:
                if kind == "imu":
                    outcome = self.predict(p)
                elif kind == "mag":
                    outcome = self.fuse_mag(p)
                elif kind == "range":
                    outcome = self.fuse_range(p)
                elif kind == "flow":
                    outcome = self.fuse_flow(p)
                elif kind == "laser":
                    outcome = self.fuse_laser(p)
                elif kind == "baro":
                    outcome = self.fuse_baro(p)
                else:
                    self.target_attitude = np.asarray(p.attitude, dtype=float)
                    outcome = StepOutcome(kind, "stored")
            except (MeasurementGuardError, ClockError, FilterError) as exc:
                outcome = StepOutcome(kind, "dropped", reason=str(exc))
        self.diagnostics.record(outcome)
        return outcome

    def predict(self, imu: ImuSample) -> StepOutcome:
        t = imu.timestamp
        if self.last_imu_time is None:
            self.last_imu_time = t
            return StepOutcome("imu", "predicted")
        dt = t - self.last_imu_time
        if dt <= 0:
            return StepOutcome("imu", "dropped", reason="non-increasing IMU timestamp")
        if dt > 0.1:
            self.last_imu_time = t
            raise ClockError(f"IMU gap of {dt:.3f} s")
        state, self.cov = propagate(self.state, self.cov, imu, dt, self.config.process)
        self.state = state.replace(timestamp=t)
        self.prior = self.state
        self.last_imu_time = t
        return StepOutcome("imu", "predicted")

    # -- updates ---------------------------------------------------------

    def _update(self, kind: str, H, y, R) -> StepOutcome:
        P = self.cov
        H = np.atleast_2d(H)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        R = np.atleast_2d(R)
        PHt = P @ H.T
        S = H @ PHt + R
        S_inv = np.linalg.inv(S)
        nis = float(y @ S_inv @ y)
        if nis > self._gate[len(y)]:
            return StepOutcome(kind, "gated", innovation=y, nis=nis)
        K = PHt @ S_inv
        A = np.eye(ERROR_DIM) - K @ H
        self.cov = symmetrize(A @ P @ A.T + K @ R @ K.T)
        self.state = inject_error(self.state, K @ y)
        return StepOutcome(kind, "accepted", innovation=y, nis=nis)

    def fuse_range(self, obs: RangeObservation) -> StepOutcome:
        if obs.target_attitude is not None:
            self.target_attitude = np.asarray(obs.target_attitude, dtype=float)
        if self.target_attitude is None:
            raise FilterError("no target attitude received yet")
        a_i = self.geometry.requesters[obs.requester_id]
        a_j = self.geometry.responders[obs.responder_id]
        H = range_jacobian(self.state, self.target_attitude, a_i, a_j)
        y = obs.distance - predict_range(self.state, self.target_attitude, a_i, a_j)
        return self._update("range", H, y, self.config.measurement.sigma_range ** 2)

    def flow_velocity(self, obs: FlowObservation) -> np.ndarray:
        """World-frame velocity pseudo-measurement from 2-D flow plus the artificial vertical flow."""
        prior = self.prior
        qz = float(prior.position[2])
        if not qz >= MIN_FLOW_ALTITUDE:
            raise MeasurementGuardError(f"altitude estimate {qz:.3g} m below flow guard")
        R = quat_to_dcm(prior.attitude, check=False)
        v_fz = (R.T @ prior.velocity)[2] / qz
        return qz * (R @ np.array([obs.v_fx, obs.v_fy, v_fz]))

    def fuse_flow(self, obs: FlowObservation) -> StepOutcome:
        v = self.flow_velocity(obs)
        qz = float(self.prior.position[2])
        R = quat_to_dcm(self.prior.attitude, check=False)
        m = self.config.measurement
        body = np.diag([(m.sigma_flow * qz) ** 2, (m.sigma_flow * qz) ** 2, (m.sigma_flow_z * qz) ** 2])
        H = np.zeros((3, ERROR_DIM))
        H[:, VEL] = np.eye(3)
        return self._update("flow", H, v - self.state.velocity, R @ body @ R.T)

    def laser_altitude(self, obs: LaserObservation) -> float:
        c = laser_cosine(self.prior.attitude)
        if not c > MIN_LASER_COSINE:
            raise MeasurementGuardError(f"tilt cosine {c:.3g} below laser guard")
        return obs.l * c

    def _fuse_altitude(self, kind: str, h: float, sigma: float) -> StepOutcome:
        H = np.zeros(ERROR_DIM)
        H[POS_Z] = 1.0
        return self._update(kind, H, h - float(self.state.position[2]), sigma ** 2)

    def fuse_laser(self, obs: LaserObservation) -> StepOutcome:
        c = laser_cosine(self.prior.attitude)
        h = self.laser_altitude(obs)
        return self._fuse_altitude("laser", h, self.config.measurement.sigma_laser * c)

    def fuse_baro(self, obs: BaroObservation) -> StepOutcome:
        return self._fuse_altitude("baro", obs.b - self.b0, self.config.measurement.sigma_baro)

    def fuse_mag(self, obs: MagObservation) -> StepOutcome:
        H = mag_jacobian(self.state, self._m_ref)
        y = obs.m - predict_mag(self.state, self._m_ref)
        return self._update("mag", H, y, self.config.measurement.sigma_mag ** 2 * np.eye(3))

    def healthy(self) -> bool:
        return self.state is not None and self.state.is_finite() and covariance_ok(self.cov)

    # -- initialization ----------------------------------------------------

    def initialize(self, buffer: "InitBuffer"):
        state, cov, b0 = initialize(buffer, self.geometry, self.config)
        self.reset(state, cov, b0)
        if buffer.target_attitude is not None:
            self.target_attitude = buffer.target_attitude
        return state, cov


@dataclass
class InitBuffer:
    """Sensor data collected while the MAV is held stationary."""

    imu: list = field(default_factory=list)
    mag: list = field(default_factory=list)
    ranges: dict = field(default_factory=dict)
    laser: list = field(default_factory=list)
    baro: list = field(default_factory=list)
    target_attitude: np.ndarray | None = None

    def add(self, event: SensorEvent):
        p = event.payload
        kind = event.kind
        if kind == "imu":
            self.imu.append(p)
        elif kind == "mag":
            self.mag.append(p)
        elif kind == "range":
            self.ranges[(p.requester_id, p.responder_id)] = p
            if p.target_attitude is not None:
                self.target_attitude = np.asarray(p.target_attitude, dtype=float)
        elif kind == "laser":
            self.laser.append(p)
        elif kind == "baro":
            self.baro.append(p)
        elif kind == "target_attitude":
            self.target_attitude = np.asarray(p.attitude, dtype=float)

    def imu_span(self) -> float:
        return self.imu[-1].timestamp - self.imu[0].timestamp if len(self.imu) > 1 else 0.0

    def ready(self, geometry: NodeGeometry, window: float = 1.0) -> bool:
        return (self.imu_span() >= window - 1e-9 and len(self.ranges) == geometry.n_pairs
                and self.target_attitude is not None)


def level_attitude(accel_mean, mag_mean, m_ref) -> np.ndarray:
    """Attitude from gravity (roll, pitch) and a tilt-compensated field heading (yaw)."""
    ax, ay, az = accel_mean
    roll = math.atan2(ay, az)
    pitch = math.atan2(-ax, math.hypot(ay, az))
    if mag_mean is None:
        return quat_from_euler(roll, pitch, 0.0)
    tilt = quat_to_dcm(quat_from_euler(roll, pitch, 0.0), check=False)
    m_h = tilt @ np.asarray(mag_mean, dtype=float)
    yaw = math.atan2(m_ref[1], m_ref[0]) - math.atan2(m_h[1], m_h[0])
    return quat_from_euler(roll, pitch, yaw)


def trilaterate(ranges: dict, geometry: NodeGeometry, attitude, target_attitude,
                altitude: float | None = None, sigma_range: float = 0.02,
                sigma_altitude: float = 0.02) -> np.ndarray:
    """Least-squares relative position from one full cycle of ranges.

    An altitude reading, when given, enters as an extra residual; it resolves the
    mirror solution through the requester plane.
    """
    R = quat_to_dcm(attitude, check=False)
    RM = quat_to_dcm(target_attitude, check=False)
    keys = sorted(ranges)
    offsets = np.array([R @ geometry.requesters[i] - RM @ geometry.responders[j] for i, j in keys])
    d = np.array([ranges[k].distance for k in keys])

    def residuals(q):
        r = (np.linalg.norm(q + offsets, axis=1) - d) / sigma_range
        if altitude is not None:
            r = np.append(r, (q[2] - altitude) / sigma_altitude)
        return r

    centre = -offsets.mean(axis=0)
    radius = float(np.mean(d))
    z0 = altitude if altitude is not None else 0.0
    best = None
    for k in range(8):
        a = 2.0 * math.pi * k / 8
        for dz in ((0.0,) if altitude is not None else (-1.0, 1.0)):
            guess = np.array([centre[0] + radius * math.cos(a), centre[1] + radius * math.sin(a),
                              z0 + dz * radius])
            sol = least_squares(residuals, guess, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
            if best is None or sol.cost < best.cost:
                best = sol
    return best.x


def initialize(buffer: InitBuffer, geometry: NodeGeometry, config: FilterConfig
               ) -> tuple[StateEstimate, np.ndarray, float]:
    if len(buffer.imu) < 2 or buffer.imu_span() < config.init_window - 1e-9:
        raise FilterError(f"need {config.init_window} s of stationary IMU, have {buffer.imu_span():.3f} s")
    if len(buffer.ranges) < geometry.n_pairs:
        raise FilterError(f"need a full ranging cycle, have {len(buffer.ranges)}/{geometry.n_pairs} pairs")
    if buffer.target_attitude is None:
        raise FilterError("no target attitude received")
    t_end = buffer.imu[-1].timestamp
    window = [s for s in buffer.imu if s.timestamp >= t_end - config.init_window - 1e-9]
    accel = np.mean([s.accel for s in window], axis=0)
    gyro = np.mean([s.omega for s in window], axis=0)
    mag = np.mean([s.m for s in buffer.mag], axis=0) if buffer.mag else None
    attitude = level_attitude(accel, mag, config.m_ref)
    altitude = None
    if buffer.laser:
        laser = buffer.laser[-10:]
        altitude = float(np.mean([o.l for o in laser])) * laser_cosine(attitude)
    position = trilaterate(buffer.ranges, geometry, attitude, buffer.target_attitude, altitude,
                           config.measurement.sigma_range, config.measurement.sigma_laser)
    b0 = buffer.baro[0].b - float(position[2]) if buffer.baro else 0.0
    state = StateEstimate(attitude=attitude, velocity=np.zeros(3), position=position,
                          gyro_bias=gyro, timestamp=t_end)
    cov = initial_covariance(
        [config.sigma_roll_pitch, config.sigma_roll_pitch, config.sigma_yaw],
        config.sigma_velocity, config.sigma_position, config.sigma_gyro_bias,
    )
    return state, cov, b0
