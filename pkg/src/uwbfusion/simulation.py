"""Closed-loop scenario simulation: truth dynamics, sensor synthesis, control."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .fusion import InitBuffer, RelativeEkf, SensorEvent, make_event
from .metrics import TraceRecord
from .quaternion import (
    IDENTITY,
    cross,
    quat_conjugate,
    quat_multiply,
    quat_to_dcm,
    quat_to_rotvec,
    renormalize,
    rotvec_to_quat,
    so3_log,
    yaw_quat,
)
from .ranging import (
    NodeGeometry,
    RangingNoise,
    RangingSimulator,
    build_schedule,
    default_geometry,
    default_schedule,
    draw_true_bias,
)
from .sensors import (
    BaroObservation,
    FlowObservation,
    LaserObservation,
    MagObservation,
    laser_cosine,
    magnetic_reference,
)
from .state import StateEstimate, initial_covariance
from .strapdown import GRAVITY, GRAVITY_VECTOR, ImuSample
from .trajectory import Reference, ScenarioTrajectory, generate_trajectory

_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True)
class TruthSample:
    t: float
    mav_position: np.ndarray
    mav_velocity: np.ndarray
    mav_attitude: np.ndarray
    target_position: np.ndarray
    target_velocity: np.ndarray
    target_attitude: np.ndarray

    @property
    def relative_position(self) -> np.ndarray:
        return self.mav_position - self.target_position

    @property
    def relative_velocity(self) -> np.ndarray:
        return self.mav_velocity - self.target_velocity


def thrust_attitude(thrust, yaw: float = 0.0) -> np.ndarray:
    """Attitude whose body z axis points along ``thrust`` with the given heading."""
    b3 = np.asarray(thrust, dtype=float)
    b3 = b3 / np.linalg.norm(b3)
    heading = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    b2 = cross(b3, heading)
    b2 /= np.linalg.norm(b2)
    b1 = cross(b2, b3)
    R = np.column_stack([b1, b2, b3])
    return dcm_to_quat(R)


def dcm_to_quat(R) -> np.ndarray:
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return renormalize(np.array(q))


class MavDynamics:
    """Point-mass MAV with first-order attitude lag.

    Over each interval the body rate and the specific force are constant, so the
    IMU reading for the interval is exact and the state at any time inside it
    follows by quadrature.
    """

    def __init__(self, position, velocity=(0.0, 0.0, 0.0), attitude=IDENTITY, lag_tau: float = 0.15, t: float = 0.0):
        self.t = t
        self.position = np.array(position, dtype=float)
        self.velocity = np.array(velocity, dtype=float)
        self.attitude = np.array(attitude, dtype=float)
        self.accel = np.zeros(3)  # achieved world acceleration
        self.lag_tau = lag_tau
        self.dt = 0.0
        self.omega = np.zeros(3)
        self.force = GRAVITY_VECTOR.copy()
        self._accel_next = self.accel
        self._cache = None

    def plan(self, accel_cmd, dt: float, yaw: float = 0.0):
        alpha = 1.0 - math.exp(-dt / self.lag_tau)
        a_next = self.accel + (np.asarray(accel_cmd, dtype=float) - self.accel) * alpha
        q_next = thrust_attitude(a_next + GRAVITY_VECTOR, yaw)
        self.omega = quat_to_rotvec(quat_multiply(quat_conjugate(self.attitude), q_next)) / dt
        thrust = 0.5 * (self.accel + a_next) + GRAVITY_VECTOR
        self.force = np.array([0.0, 0.0, float(np.linalg.norm(thrust))])
        self.dt = dt
        self._accel_next = a_next
        self._cache = None

    def _rotated_force(self, s: np.ndarray) -> np.ndarray:
        """Body specific force rotated by ``Exp(omega * s)`` for each node ``s`` (Rodrigues)."""
        f = self.force
        rate = float(np.linalg.norm(self.omega))
        if rate < 1e-12:
            return np.tile(f, (len(s), 1))
        k = self.omega / rate
        th = rate * s[:, None]
        kf = cross(k, f)
        return f * np.cos(th) + kf * np.sin(th) + k * (k @ f) * (1.0 - np.cos(th))

    def state_at(self, tau: float):
        """Position, velocity, attitude ``tau`` seconds into the planned interval."""
        if tau <= 0.0:
            return self.position, self.velocity, self.attitude
        if self._cache is not None and self._cache[0] == tau:
            return self._cache[1]
        self._cache = (tau, self._integrate(tau))
        return self._cache[1]

    def _integrate(self, tau: float):
        R0 = quat_to_dcm(self.attitude, check=False)
        s = 0.5 * tau * (_GL_X + 1.0)
        w = 0.5 * tau * _GL_W
        f = self._rotated_force(s) @ R0.T
        dv = w @ f
        dp = (w * (tau - s)) @ f
        v = self.velocity + dv - GRAVITY_VECTOR * tau
        p = self.position + self.velocity * tau + dp - 0.5 * GRAVITY_VECTOR * tau * tau
        q = renormalize(quat_multiply(self.attitude, rotvec_to_quat(self.omega * tau)))
        return p, v, q

    def commit(self):
        self.position, self.velocity, self.attitude = self.state_at(self.dt)
        self._cache = None
        self.accel = self._accel_next
        self.t += self.dt


class ClosedLoopTruth:
    """Truth provider over the MAV's currently planned interval."""

    def __init__(self, mav: MavDynamics, trajectory: ScenarioTrajectory):
        self.mav = mav
        self.trajectory = trajectory

    def target_attitude(self, t: float) -> np.ndarray:
        return self.trajectory.target_pose(t).attitude

    def sample(self, t: float) -> TruthSample:
        tau = t - self.mav.t
        if tau < -1e-9 or tau > self.mav.dt + 1e-9:
            raise ValueError(f"truth requested at {t} outside interval starting {self.mav.t}")
        p, v, q = self.mav.state_at(min(max(tau, 0.0), self.mav.dt))
        tp = self.trajectory.target_pose(t)
        return TruthSample(t, p, v, q, tp.position, tp.velocity, tp.attitude)

    def imu_interval(self, t0: float, t1: float):
        return self.mav.omega.copy(), self.mav.force.copy()


class AnalyticTruth:
    """Truth from smooth closed-form functions of time (open loop).

    ``position``/``attitude`` give the MAV's inertial pose; derivatives default
    to central differences. The target defaults to a static identity pose.
    """

    def __init__(self, position, attitude=None, velocity=None, acceleration=None,
                 target=None, h: float = 1e-5):
        self.position = position
        self.attitude = attitude or (lambda t: IDENTITY)
        self.velocity = velocity or (lambda t: (np.asarray(position(t + h)) - np.asarray(position(t - h))) / (2 * h))
        self.acceleration = acceleration or (
            lambda t: (np.asarray(self.velocity(t + h)) - np.asarray(self.velocity(t - h))) / (2 * h))
        self.target = target
        self.h = h

    def _target(self, t):
        if self.target is None:
            return np.zeros(3), np.zeros(3), IDENTITY
        pose = self.target.pose(t)
        return pose.position, pose.velocity, pose.attitude

    def target_attitude(self, t: float) -> np.ndarray:
        return self._target(t)[2]

    def sample(self, t: float) -> TruthSample:
        tp, tv, tq = self._target(t)
        return TruthSample(t, np.asarray(self.position(t), dtype=float), np.asarray(self.velocity(t), dtype=float),
                           np.asarray(self.attitude(t), dtype=float), tp, tv, tq)

    def body_rate(self, t: float) -> np.ndarray:
        h = self.h
        R0 = quat_to_dcm(self.attitude(t - h), check=False)
        R1 = quat_to_dcm(self.attitude(t + h), check=False)
        return so3_log(R0.T @ R1) / (2 * h)

    def specific_force(self, t: float) -> np.ndarray:
        R = quat_to_dcm(self.attitude(t), check=False)
        return R.T @ (np.asarray(self.acceleration(t), dtype=float) + GRAVITY_VECTOR)

    def imu_interval(self, t0: float, t1: float):
        """Interval means of body rate and specific force (Gauss-Legendre)."""
        s = t0 + 0.5 * (t1 - t0) * (_GL_X + 1.0)
        w = 0.5 * _GL_W
        omega = sum(wi * self.body_rate(si) for si, wi in zip(s, w))
        force = sum(wi * self.specific_force(si) for si, wi in zip(s, w))
        return omega, force


def scenario_geometry(config: ScenarioConfig) -> NodeGeometry:
    responders = np.array(config.responder_offsets(), dtype=float)
    if config.single_pair:
        h = 0.5 * config.requester_side
        return NodeGeometry(requesters=[[h, h, 0.0]], responders=responders[:1])
    return default_geometry(responders, side=config.requester_side)


def scenario_schedule(config: ScenarioConfig, geometry: NodeGeometry):
    if geometry.n_pairs == 8 and len(geometry.requesters) == 4:
        return default_schedule(step_period=config.rates.ranging_step)
    return build_schedule(geometry, step_period=config.rates.ranging_step)


class SensorSynthesizer:
    """Generates every sensor stream from truth in time order, interval by interval."""

    def __init__(self, config: ScenarioConfig, geometry: NodeGeometry, seed: int | None = None):
        self.config = config
        self.rates = config.rates
        self.noise = config.sensor_noise
        seq = np.random.SeedSequence(config.seed if seed is None else seed)
        (uwb, imu, flow, laser, baro, mag, bias) = (np.random.default_rng(s) for s in seq.spawn(7))
        self._rng = {"imu": imu, "flow": flow, "laser": laser, "baro": baro, "mag": mag}
        n = self.noise
        self.gyro_bias = n.gyro_bias_sigma * bias.standard_normal(3)
        self.baro_drift = 0.0
        self.true_pair_bias = draw_true_bias(geometry, n.pair_bias_error_sigma, bias)
        self.m_ref = magnetic_reference(config.mag_declination)
        self.ranging = RangingSimulator(
            geometry,
            scenario_schedule(config, geometry),
            RangingNoise(sigma=n.range_sigma, dropout=n.range_dropout, nlos_probability=n.nlos_probability,
                         nlos_max=n.nlos_max, pair_bias_error_sigma=n.pair_bias_error_sigma),
            uwb,
            payload_hz=self.rates.payload_hz,
            payload_yaw_sigma=n.payload_yaw_sigma,
            true_bias=self.true_pair_bias,
        )
        self._next = {"imu": 1, "flow": 1, "laser": 1, "baro": 1, "mag": 1}
        r = self.rates
        self._hz = {"imu": r.imu_hz, "flow": r.flow_hz, "laser": r.laser_hz, "baro": r.baro_hz, "mag": r.mag_hz}
        self._enabled = {"imu": True, "flow": r.use_flow, "laser": r.use_laser, "baro": r.use_baro, "mag": r.use_mag}
        self.counts = {k: 0 for k in ("imu", "flow", "laser", "baro", "mag", "range", "target_attitude")}

    def _times(self, kind: str, t1: float):
        hz = self._hz[kind]
        k = self._next[kind]
        while k / hz <= t1 + 1e-9:
            yield k / hz
            k += 1
        self._next[kind] = k

    def _imu(self, truth, t: float) -> ImuSample:
        omega, force = truth.imu_interval(t - 1.0 / self._hz["imu"], t)
        rng, n = self._rng["imu"], self.noise
        if n.gyro_bias_walk > 0:
            self.gyro_bias = self.gyro_bias + n.gyro_bias_walk * math.sqrt(1.0 / self._hz["imu"]) * rng.standard_normal(3)
        omega = omega + self.gyro_bias + n.gyro_sigma * rng.standard_normal(3)
        force = force + n.accel_sigma * rng.standard_normal(3)
        return ImuSample(omega, force, t)

    def _flow(self, truth, t: float) -> FlowObservation:
        s = truth.sample(t)
        v = s.relative_velocity if self.config.flow_reference == "relative" else s.mav_velocity
        R = quat_to_dcm(s.mav_attitude, check=False)
        qz = float(s.relative_position[2])
        f = (R.T @ v)[:2] / qz + self.noise.flow_sigma * self._rng["flow"].standard_normal(2)
        return FlowObservation(float(f[0]), float(f[1]), t)

    def _laser(self, truth, t: float) -> LaserObservation:
        s = truth.sample(t)
        c = laser_cosine(s.mav_attitude)
        l = float(s.relative_position[2]) / c + self.noise.laser_bias + self.noise.laser_sigma * self._rng["laser"].standard_normal()
        return LaserObservation(l, t)

    def _baro(self, truth, t: float) -> BaroObservation:
        s = truth.sample(t)
        rng, n = self._rng["baro"], self.noise
        if n.baro_drift > 0:
            self.baro_drift += n.baro_drift * math.sqrt(1.0 / self._hz["baro"]) * rng.standard_normal()
        b = float(s.relative_position[2]) + n.baro_b0 + self.baro_drift + n.baro_sigma * rng.standard_normal()
        return BaroObservation(b, t)

    def _mag(self, truth, t: float) -> MagObservation:
        s = truth.sample(t)
        m = quat_to_dcm(s.mav_attitude, check=False).T @ self.m_ref
        m = m + self.noise.mag_sigma * self._rng["mag"].standard_normal(3)
        return MagObservation(m, t)

    def events(self, truth, t0: float, t1: float) -> list[SensorEvent]:
        """All events stamped in ``(t0, t1]`` (ranging slots up to ``t1``)."""
        out = []
        makers = {"imu": self._imu, "flow": self._flow, "laser": self._laser, "baro": self._baro, "mag": self._mag}
        for kind, make in makers.items():
            if not self._enabled[kind]:
                continue
            for t in self._times(kind, t1):
                out.append(make_event(make(truth, t)))
                self.counts[kind] += 1
        for payload in self.ranging.advance(truth, t1):
            ev = make_event(payload)
            self.counts[ev.kind] += 1
            out.append(ev)
        out.sort(key=SensorEvent.sort_key)
        return out


def synthesize_sensors(truth, config: ScenarioConfig, seed: int | None = None,
                       duration: float | None = None, step: float | None = None) -> list[SensorEvent]:
    """Open-loop merged event stream over ``[0, duration]`` from an analytic truth."""
    geometry = scenario_geometry(config)
    synth = SensorSynthesizer(config, geometry, seed)
    duration = config.duration if duration is None else duration
    step = 1.0 / config.rates.imu_hz if step is None else step
    n = int(round(duration / step))
    events = []
    for k in range(n):
        events.extend(synth.events(truth, k * step, (k + 1) * step))
    return events


def position_command(estimate: StateEstimate, reference: Reference, gains) -> np.ndarray:
    """PD acceleration command from the estimate; gravity is added by the vehicle."""
    kp = np.array([gains.kp_xy, gains.kp_xy, gains.kp_z])
    kd = np.array([gains.kd_xy, gains.kd_xy, gains.kd_z])
    a = (reference.acceleration + kp * (reference.position - estimate.position)
         + kd * (reference.velocity - estimate.velocity))
    limit = GRAVITY * math.tan(math.radians(gains.max_tilt_deg))
    horiz = math.hypot(a[0], a[1])
    if horiz > limit:
        a[:2] *= limit / horiz
    a[2] = min(max(a[2], -0.5 * GRAVITY), 0.5 * GRAVITY)
    return a


@dataclass
class RunResult:
    config: ScenarioConfig
    trace: list = field(default_factory=list)
    commands: list = field(default_factory=list)
    aborted: bool = False
    reason: str = ""
    init_time: float | None = None
    diagnostics: object = None
    event_counts: dict = field(default_factory=dict)


class ClosedLoopSimulation:
    """MAV flies on its own estimate; the controller never reads truth."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.geometry = scenario_geometry(config)
        self.trajectory = generate_trajectory(config)
        self.synth = SensorSynthesizer(config, self.geometry)
        target0 = self.trajectory.target_pose(0.0)
        ref0 = self.trajectory.reference(0.0, target0.attitude)
        self.mav = MavDynamics(target0.position + ref0.position, target0.velocity,
                               lag_tau=config.controller.lag_tau)
        self.truth = ClosedLoopTruth(self.mav, self.trajectory)
        self.filter = RelativeEkf(self.geometry, config.filter_config())
        self.buffer = InitBuffer()
        self.dt = 1.0 / config.rates.imu_hz
        self.control_every = max(1, int(round(config.rates.imu_hz / config.rates.control_hz)))
        self.n_steps = int(round(config.duration / self.dt))
        self.k = 0
        self.accel_cmd = np.zeros(3)
        self.result = RunResult(config)
        # Called as observer(event, outcome, filter) after every filter step.
        self.observers = []

    @property
    def time(self) -> float:
        return self.k * self.dt

    def control_tick(self, t: float) -> np.ndarray:
        """Command from the filter snapshot and the relayed target attitude."""
        ref = self.trajectory.reference(t, self.filter.target_attitude)
        return position_command(self.filter.state, ref, self.config.controller)

    def _initialize(self, t: float):
        if self.config.init_mode == "truth":
            truth = self.truth.sample(t)
            state = StateEstimate(attitude=truth.mav_attitude, velocity=truth.relative_velocity,
                                  position=truth.relative_position, gyro_bias=self.synth.gyro_bias, timestamp=t)
            fc = self.filter.config
            cov = initial_covariance([fc.sigma_roll_pitch, fc.sigma_roll_pitch, fc.sigma_yaw], fc.sigma_velocity,
                                     fc.sigma_position, fc.sigma_gyro_bias)
            b0 = self.config.sensor_noise.baro_b0
            self.filter.reset(state, cov, b0, imu_time=t)
            self.filter.target_attitude = self.buffer.target_attitude
        else:
            self.filter.initialize(self.buffer)
        offset = math.radians(self.config.initial_yaw_error_deg)
        if offset:
            f = self.filter
            st = f.state.replace(attitude=renormalize(quat_multiply(yaw_quat(offset), f.state.attitude)))
            f.reset(st, f.cov, f.b0, imu_time=f.last_imu_time)
        self.result.init_time = t

    def _ready(self) -> bool:
        if self.config.init_mode == "truth":
            return self.buffer.target_attitude is not None
        return self.buffer.ready(self.geometry, self.config.filter.init_window)

    def step(self) -> bool:
        """Advance one IMU interval; returns False when the run is over."""
        if self.k >= self.n_steps or self.result.aborted:
            return False
        t0, t1 = self.k * self.dt, (self.k + 1) * self.dt
        self.mav.plan(self.accel_cmd, self.dt)
        events = self.synth.events(self.truth, t0, t1)
        for ev in events:
            if self.filter.initialized:
                outcome = self.filter.step(ev)
                for observer in self.observers:
                    observer(ev, outcome, self.filter)
            else:
                self.buffer.add(ev)
        truth_end = self.truth.sample(t1)
        self.mav.commit()
        self.k += 1
        if not self.filter.initialized:
            if t1 >= self.config.init_time - 1e-9 and self._ready():
                self._initialize(t1)
            return True
        if self.k % self.control_every == 0:
            self.accel_cmd = self.control_tick(t1)
            self.result.commands.append((t1, self.accel_cmd.copy()))
            self._record(t1, truth_end)
        return not self.result.aborted

    def _record(self, t: float, truth: TruthSample):
        st, P = self.filter.state, self.filter.cov
        err = float(np.max(np.abs(st.position - truth.relative_position))) if st.is_finite() else math.inf
        diverged = not (err <= self.config.controller.divergence_limit) or not np.isfinite(P).all()
        acc, gated, dropped = self.filter.diagnostics.totals()
        self.result.trace.append(TraceRecord(
            timestamp=t,
            truth_position=tuple(truth.relative_position),
            truth_velocity=tuple(truth.relative_velocity),
            truth_attitude=tuple(truth.mav_attitude),
            est_position=tuple(st.position),
            est_velocity=tuple(st.velocity),
            est_attitude=tuple(st.attitude),
            cov_diag=tuple(np.diag(P)),
            accepted=acc, gated=gated, dropped=dropped, diverged=int(diverged),
        ))
        if diverged:
            self.result.aborted = True
            self.result.reason = f"estimator diverged at t={t:.2f} s (position error {err:.2f} m)"

    def run(self) -> RunResult:
        while self.step():
            pass
        self.result.diagnostics = self.filter.diagnostics
        self.result.event_counts = dict(self.synth.counts)
        return self.result


def run_closed_loop(config: ScenarioConfig) -> RunResult:
    return ClosedLoopSimulation(config).run()
