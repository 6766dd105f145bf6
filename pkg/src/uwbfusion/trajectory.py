"""Reference and target trajectories for the experiment scenarios."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quaternion import quat_to_dcm, yaw_quat

STATIC_RESPONDERS = ((0.04, -0.57, 1.753), (0.035, 0.424, 1.778))
# Responder coordinates for the far-anchor runs are inertial; the target frame
# coincides with the inertial frame there.
FAR_RESPONDERS = ((0.369, 3.474, 1.733), (-0.625, 3.461, 1.77))
MOVING_RESPONDERS = ((-0.019, 0.700, 1.428), (-0.012, -0.338, 1.419))
ROTATING_SETPOINT = (0.0, -2.0, 0.75)

# Horizontal waypoints per trajectory index (altitude is added from the config).
FAR_ANCHOR_PATHS = {
    1: ((1.5, -1.0), (-1.5, -1.0), (-1.5, 2.0), (1.5, 2.0)),
    2: ((1.5, -0.5), (-1.5, -0.5), (-1.5, 1.5), (1.5, 1.5)),
    3: ((1.5, -1.0), (-1.5, -1.0)),
    4: ((0.0, -1.2), (0.0, 2.0)),
    5: ((0.0, -1.0), (-1.5, 0.5), (0.0, 2.0), (1.5, 0.5)),
}
TRANSLATING_PATHS = {
    1: ((0.0, 0.0), (3.0, 0.0)),
    2: ((0.0, 0.0), (0.0, 2.5)),
    3: ((0.0, 0.0), (2.5, 0.0), (2.5, 2.5), (0.0, 2.5)),
}
TRANSLATING_SETPOINTS = {
    1: (0.0, -1.5, 0.9),
    2: (1.5, 0.0, 0.9),
    3: (-1.0, -1.0, 0.9),
}


@dataclass(frozen=True)
class Trapezoid:
    """1-D rest-to-rest move of ``length`` with bounded speed and acceleration."""

    length: float
    speed: float
    accel: float

    @property
    def ramp_time(self) -> float:
        return min(self.speed / self.accel, math.sqrt(self.length / self.accel))

    @property
    def peak_speed(self) -> float:
        return self.accel * self.ramp_time

    @property
    def duration(self) -> float:
        if self.length <= 0:
            return 0.0
        ta = self.ramp_time
        ramp_len = self.accel * ta * ta
        return 2.0 * ta + (self.length - ramp_len) / self.peak_speed

    def evaluate(self, t: float) -> tuple[float, float, float]:
        """Distance, speed and acceleration at time ``t`` after the start."""
        if self.length <= 0 or t <= 0:
            return 0.0, 0.0, 0.0
        ta, vp, a = self.ramp_time, self.peak_speed, self.accel
        T = self.duration
        if t >= T:
            return self.length, 0.0, 0.0
        if t < ta:
            return 0.5 * a * t * t, a * t, a
        if t <= T - ta:
            return 0.5 * a * ta * ta + vp * (t - ta), vp, 0.0
        r = T - t
        return self.length - 0.5 * a * r * r, a * r, -a


class PolylineMotion:
    """Stop-and-go traversal of waypoints with trapezoidal edges and corner dwells."""

    def __init__(self, waypoints, speed: float, accel: float, dwell: float = 1.0,
                 start_time: float = 0.0, loop: bool = True):
        self.waypoints = np.array(waypoints, dtype=float)
        self.start_time = start_time
        self.dwell = dwell
        pts = list(self.waypoints)
        if loop and len(pts) > 1:
            pts.append(pts[0])
        self._segments = []
        for a, b in zip(pts[:-1], pts[1:]):
            delta = b - a
            length = float(np.linalg.norm(delta))
            direction = delta / length if length > 0 else np.zeros(3)
            self._segments.append((a, direction, Trapezoid(length, speed, accel)))
        self.period = sum(s[2].duration + dwell for s in self._segments)
        self.loop = loop

    def evaluate(self, t: float):
        """Position, velocity and acceleration at absolute time ``t``."""
        tau = t - self.start_time
        if tau <= 0 or not self._segments:
            return self.waypoints[0].copy(), np.zeros(3), np.zeros(3)
        if self.loop:
            tau = tau % self.period
        elif tau >= self.period:
            return self.waypoints[-1].copy(), np.zeros(3), np.zeros(3)
        for origin, direction, prof in self._segments:
            if tau < prof.duration:
                s, v, a = prof.evaluate(tau)
                return origin + s * direction, v * direction, a * direction
            tau -= prof.duration
            if tau < self.dwell:
                return origin + prof.length * direction, np.zeros(3), np.zeros(3)
            tau -= self.dwell
        return self.waypoints[0].copy(), np.zeros(3), np.zeros(3)


@dataclass(frozen=True)
class TargetPose:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    attitude: np.ndarray


@dataclass(frozen=True)
class Reference:
    """Relative position setpoint with velocity and acceleration feedforward."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray


class StaticTarget:
    def __init__(self, position=(0.0, 0.0, 0.0), yaw: float = 0.0):
        self._pose = TargetPose(np.array(position, dtype=float), np.zeros(3), np.zeros(3), yaw_quat(yaw))

    def pose(self, t: float) -> TargetPose:
        return self._pose


class TranslatingTarget:
    """Ground vehicle moving along a polyline with a small heading wobble."""

    def __init__(self, motion: PolylineMotion, yaw_amplitude: float = math.radians(2.0),
                 yaw_period: float = 20.0):
        self.motion = motion
        self.yaw_amplitude = yaw_amplitude
        self.yaw_period = yaw_period

    def pose(self, t: float) -> TargetPose:
        p, v, a = self.motion.evaluate(t)
        yaw = self.yaw_amplitude * math.sin(2.0 * math.pi * t / self.yaw_period)
        return TargetPose(p, v, a, yaw_quat(yaw))


class CircleTarget:
    """Ground vehicle driving a circle counter-clockwise, heading along its path."""

    def __init__(self, radius: float, speed: float, accel: float, start_time: float,
                 turns: float = 1.0):
        self.radius = radius
        self.start_time = start_time
        self.profile = Trapezoid(2.0 * math.pi * radius * turns, speed, accel)

    def pose(self, t: float) -> TargetPose:
        s, v, a = self.profile.evaluate(t - self.start_time)
        r = self.radius
        psi = s / r
        c, sn = math.cos(psi), math.sin(psi)
        pos = np.array([r * sn, r * (1.0 - c), 0.0])
        tangent = np.array([c, sn, 0.0])
        normal = np.array([-sn, c, 0.0])
        return TargetPose(pos, v * tangent, a * tangent + (v * v / r) * normal, yaw_quat(psi))


def rotated_setpoint(target_attitude, offset=ROTATING_SETPOINT) -> np.ndarray:
    """Relative setpoint fixed in the target frame, expressed in the inertial frame."""
    return quat_to_dcm(target_attitude, check=False) @ np.asarray(offset, dtype=float)


class ScenarioTrajectory:
    """Target motion plus the relative reference the MAV is asked to track.

    ``reference`` receives the target attitude as known to the MAV (the relayed
    payload), never the simulator's truth.
    """

    def __init__(self, target, reference_motion: PolylineMotion | None = None,
                 fixed_setpoint=None, heading_offset=None):
        self.target = target
        self.reference_motion = reference_motion
        self.fixed_setpoint = None if fixed_setpoint is None else np.array(fixed_setpoint, dtype=float)
        self.heading_offset = None if heading_offset is None else np.array(heading_offset, dtype=float)

    def target_pose(self, t: float) -> TargetPose:
        return self.target.pose(t)

    def target_attitude(self, t: float) -> np.ndarray:
        return self.target.pose(t).attitude

    def reference(self, t: float, target_attitude=None) -> Reference:
        zero = np.zeros(3)
        if self.reference_motion is not None:
            p, v, a = self.reference_motion.evaluate(t)
            return Reference(p, v, a)
        if self.heading_offset is not None:
            att = target_attitude if target_attitude is not None else np.array([1.0, 0, 0, 0])
            return Reference(rotated_setpoint(att, self.heading_offset), zero, zero)
        return Reference(self.fixed_setpoint.copy(), zero, zero)

    def absolute_setpoint(self, t: float, target_attitude=None) -> np.ndarray:
        return self.target_pose(t).position + self.reference(t, target_attitude).position


def generate_trajectory(config) -> ScenarioTrajectory:
    """Build the scenario's target motion and relative reference from a ScenarioConfig."""
    kind = config.kind
    h = config.altitude
    start = config.start_time
    if kind == "static_square":
        s = 0.5 * config.square_side
        corners = ((s, s, h), (-s, s, h), (-s, -s, h), (s, -s, h))
        motion = PolylineMotion(corners, config.edge_speed, config.edge_accel, config.corner_dwell, start)
        return ScenarioTrajectory(StaticTarget(), reference_motion=motion)
    if kind == "far_anchor":
        path = FAR_ANCHOR_PATHS.get(config.trajectory_index)
        if path is None:
            raise ValueError(f"trajectory_index: no far-anchor path {config.trajectory_index}")
        pts = [(x, y, h) for x, y in path]
        motion = PolylineMotion(pts, config.edge_speed, config.edge_accel, config.corner_dwell, start)
        return ScenarioTrajectory(StaticTarget(), reference_motion=motion)
    if kind == "translating_target":
        path = TRANSLATING_PATHS.get(config.trajectory_index)
        if path is None:
            raise ValueError(f"trajectory_index: no translating path {config.trajectory_index}")
        motion = PolylineMotion([(x, y, 0.0) for x, y in path], config.target_speed,
                                config.target_accel, config.corner_dwell, start)
        setpoint = config.relative_setpoint or TRANSLATING_SETPOINTS[config.trajectory_index]
        return ScenarioTrajectory(TranslatingTarget(motion), fixed_setpoint=setpoint)
    if kind == "rotating_target":
        target = CircleTarget(config.circle_radius, config.target_speed, config.target_accel, start)
        offset = config.relative_setpoint or ROTATING_SETPOINT
        return ScenarioTrajectory(target, heading_offset=offset)
    raise ValueError(f"kind: unknown scenario kind {kind!r}")
