import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import rotation_vectors, unit_quaternions
from uwbfusion.jacobian_check import MODELS, compare, numeric_jacobian, random_case
from uwbfusion.quaternion import IDENTITY, attitude_error, euler_from_quat, is_unit, quat_from_euler
from uwbfusion.simulation import AnalyticTruth
from uwbfusion.state import StateEstimate, initial_covariance
from uwbfusion.strapdown import (
    GRAVITY,
    ClockError,
    ImuSample,
    ProcessNoiseConfig,
    propagate,
    transition_matrix,
)

HOVER = ImuSample(np.zeros(3), np.array([0.0, 0.0, GRAVITY]), 0.0)
NO_NOISE = ProcessNoiseConfig(0.0, 0.0, 0.0, 0.0)
P0 = initial_covariance(0.02, 0.1, 0.1, 0.005)


def test_hover_is_an_equilibrium():
    s0 = StateEstimate(position=[0.3, -0.2, 0.9])
    s, _ = propagate(s0, P0, HOVER, 0.01, NO_NOISE)
    np.testing.assert_allclose(s.position, s0.position, atol=1e-12)
    np.testing.assert_allclose(s.velocity, 0.0, atol=1e-12)
    np.testing.assert_allclose(s.attitude, IDENTITY, atol=1e-15)
    assert s.timestamp == pytest.approx(0.01)


def test_constant_yaw_rate_integrates_to_quarter_turn():
    s, P = StateEstimate(), P0
    imu = ImuSample([0.0, 0.0, math.pi], [0.0, 0.0, GRAVITY], 0.0)
    for _ in range(50):
        s, P = propagate(s, P, imu, 0.01, NO_NOISE)
    assert euler_from_quat(s.attitude)[2] == pytest.approx(math.pi / 2, abs=1e-6)


def test_constant_vertical_acceleration():
    s, P = StateEstimate(), P0
    imu = ImuSample(np.zeros(3), [0.0, 0.0, GRAVITY + 1.0], 0.0)
    for _ in range(100):
        s, P = propagate(s, P, imu, 0.01, NO_NOISE)
    assert s.velocity[2] == pytest.approx(1.0, abs=1e-3)
    assert s.position[2] == pytest.approx(0.5, abs=1e-3)


def test_gyro_bias_is_subtracted():
    s = StateEstimate(gyro_bias=[0.0, 0.0, 0.1])
    imu = ImuSample([0.0, 0.0, 0.1], [0.0, 0.0, GRAVITY], 0.0)
    out, _ = propagate(s, P0, imu, 0.05, NO_NOISE)
    np.testing.assert_allclose(out.attitude, IDENTITY, atol=1e-15)


@pytest.mark.parametrize("dt", [0.0, -0.01, 0.2, math.nan])
def test_invalid_intervals_raise(dt):
    with pytest.raises(ClockError):
        propagate(StateEstimate(), P0, HOVER, dt, NO_NOISE)


@settings(max_examples=60)
@given(unit_quaternions(), rotation_vectors(max_angle=2.0), st.floats(0.001, 0.05),
       st.lists(st.floats(0.01, 0.5), min_size=4, max_size=4))
def test_trace_does_not_shrink_without_updates(q, omega, dt, sigmas):
    s = StateEstimate(attitude=q, velocity=[0.5, -0.2, 0.1], position=[1.0, 2.0, 0.8])
    P = initial_covariance(*sigmas)
    imu = ImuSample(omega, [0.5, -1.0, GRAVITY], 0.0)
    noise = ProcessNoiseConfig()
    for _ in range(20):
        before = np.trace(P)
        s, P = propagate(s, P, imu, dt, noise)
        assert np.trace(P) >= before - 1e-15 * before
        assert is_unit(s.attitude)


def test_propagation_is_bit_deterministic():
    s0 = StateEstimate(attitude=quat_from_euler(0.1, 0.2, 0.3), velocity=[1, 0, 0])
    imu = ImuSample([0.3, -0.2, 0.5], [0.4, 0.1, 9.7], 0.0)
    a = propagate(s0, P0, imu, 0.01, ProcessNoiseConfig())
    b = propagate(s0, P0, imu, 0.01, ProcessNoiseConfig())
    assert a[0].attitude.tobytes() == b[0].attitude.tobytes()
    assert a[0].position.tobytes() == b[0].position.tobytes()
    assert a[1].tobytes() == b[1].tobytes()


def test_transition_matrix_against_finite_differences():
    rng = np.random.default_rng(21)
    model, _ = MODELS["transition"]
    for _ in range(200):
        case = random_case(rng)
        ok, ratio = compare(transition_matrix(case.state, case.imu, case.dt), numeric_jacobian(model(case), case.state))
        assert ok, ratio


def _smooth_truth():
    def position(t):
        return np.array([math.sin(0.5 * t), math.cos(0.3 * t) - 1.0, 0.9 + 0.2 * math.sin(0.7 * t)])

    def velocity(t):
        return np.array([0.5 * math.cos(0.5 * t), -0.3 * math.sin(0.3 * t), 0.14 * math.cos(0.7 * t)])

    def acceleration(t):
        return np.array([-0.25 * math.sin(0.5 * t), -0.09 * math.cos(0.3 * t), -0.098 * math.sin(0.7 * t)])

    def attitude(t):
        return quat_from_euler(0.1 * math.sin(0.4 * t), 0.1 * math.cos(0.5 * t), 0.5 * math.sin(0.2 * t))

    return AnalyticTruth(position, attitude, velocity, acceleration)


def test_exact_imu_tracks_smooth_trajectory_for_a_minute():
    truth = _smooth_truth()
    t0 = truth.sample(0.0)
    s = StateEstimate(attitude=t0.mav_attitude, velocity=t0.mav_velocity, position=t0.mav_position)
    P = P0
    dt = 0.01
    worst_att = worst_pos = 0.0
    for k in range(1, 6001):
        t = k * dt
        omega, force = truth.imu_interval(t - dt, t)
        s, P = propagate(s, P, ImuSample(omega, force, t), dt, NO_NOISE)
        assert is_unit(s.attitude)
        ref = truth.sample(t)
        worst_att = max(worst_att, float(np.linalg.norm(attitude_error(s.attitude, ref.mav_attitude))))
        worst_pos = max(worst_pos, float(np.linalg.norm(s.position - ref.mav_position)))
    assert worst_att < 0.01
    assert worst_pos < 0.05
