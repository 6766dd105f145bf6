import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from conftest import unit_quaternions, vec3
from uwbfusion.jacobian_check import MODELS, compare, numeric_jacobian, random_case
from uwbfusion.quaternion import IDENTITY, quat_from_euler, quat_to_dcm, yaw_quat
from uwbfusion.ranging import antenna_distance
from uwbfusion.sensors import (
    MagObservation,
    MeasurementGuardError,
    baro_jacobian,
    flow_jacobian,
    laser_cosine,
    mag_jacobian,
    magnetic_reference,
    predict_baro,
    predict_flow,
    predict_laser,
    predict_mag,
    predict_range,
    range_jacobian,
)
from uwbfusion.state import ATT, BIAS, ERROR_DIM, POS, POS_Z, VEL, StateEstimate

ZERO = np.zeros(3)
QUARTER_YAW = yaw_quat(math.pi / 2)


def test_range_without_lever_arms_is_position_norm():
    s = StateEstimate(attitude=quat_from_euler(0.3, 0.1, 2.0), position=[3.0, 4.0, 0.0])
    assert predict_range(s, yaw_quat(1.0), ZERO, ZERO) == pytest.approx(5.0, abs=1e-15)


def test_range_with_lever_arms():
    s = StateEstimate(position=[1.0, 0.0, 0.0])
    d = predict_range(s, IDENTITY, [0.275, 0.275, 0.0], [0.5, 0.0, 0.0])
    assert d == pytest.approx(math.hypot(0.775, 0.275), abs=1e-15)
    assert d == pytest.approx(0.822344, abs=1e-6)


def test_range_with_target_half_turn():
    s = StateEstimate(position=[1.0, 0.0, 0.0])
    assert predict_range(s, yaw_quat(math.pi), ZERO, [0.5, 0.0, 0.0]) == pytest.approx(1.5, abs=1e-15)


@given(unit_quaternions(), unit_quaternions(), vec3, vec3, vec3)
def test_range_symmetric_under_swapping_antenna_positions(q_mav, q_tgt, p, a_i, a_j):
    forward = antenna_distance(p, q_mav, ZERO, q_tgt, a_i, a_j)
    swapped = antenna_distance(ZERO, q_tgt, p, q_mav, a_j, a_i)
    assert forward == pytest.approx(swapped, rel=1e-12, abs=1e-12)
    s = StateEstimate(attitude=q_mav, position=p)
    assert predict_range(s, q_tgt, a_i, a_j) == pytest.approx(forward, rel=1e-12, abs=1e-12)


def test_range_jacobian_structure():
    s = StateEstimate(attitude=quat_from_euler(0.2, -0.1, 0.7), position=[1.0, -2.0, 0.8])
    H = range_jacobian(s, yaw_quat(0.3), ZERO, [0.1, 0.5, 1.7])
    np.testing.assert_array_equal(H[ATT], 0.0)
    assert np.linalg.norm(H[POS]) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(H[VEL], 0.0)
    np.testing.assert_array_equal(H[BIAS], 0.0)


def test_range_jacobian_guard_at_coincident_antennae():
    s = StateEstimate(position=[0.0, 0.0, 0.0])
    with pytest.raises(MeasurementGuardError):
        range_jacobian(s, IDENTITY, ZERO, ZERO)


def test_flow_examples():
    assert tuple(predict_flow(StateEstimate(position=[0, 0, 1.0]))) == (0.0, 0.0)
    s = StateEstimate(velocity=[1.0, 0.0, 0.0], position=[0.0, 0.0, 2.0])
    np.testing.assert_allclose(predict_flow(s), [0.5, 0.0], atol=1e-15)
    s = StateEstimate(attitude=QUARTER_YAW, velocity=[1.0, 0.0, 0.0], position=[0.0, 0.0, 1.0])
    np.testing.assert_allclose(predict_flow(s), [0.0, -1.0], atol=1e-15)


def test_flow_guard_near_ground():
    with pytest.raises(MeasurementGuardError):
        predict_flow(StateEstimate(position=[0.0, 0.0, 0.05]))


@given(unit_quaternions(), vec3, st.floats(0.2, 20.0))
def test_flow_scales_inversely_with_altitude(q, v, qz):
    a = predict_flow(StateEstimate(attitude=q, velocity=v, position=[0.0, 0.0, qz]))
    b = predict_flow(StateEstimate(attitude=q, velocity=v, position=[0.0, 0.0, 2 * qz]))
    np.testing.assert_array_equal(b, a / 2)


def test_laser_examples():
    assert predict_laser(StateEstimate(position=[0, 0, 0.9])) == pytest.approx(0.9, abs=1e-15)
    roll60 = np.array([math.cos(math.radians(30)), math.sin(math.radians(30)), 0.0, 0.0])
    assert predict_laser(StateEstimate(attitude=roll60, position=[0, 0, 0.9])) == pytest.approx(1.8, abs=1e-12)
    roll90 = np.array([math.sqrt(0.5), math.sqrt(0.5), 0.0, 0.0])
    with pytest.raises(MeasurementGuardError):
        predict_laser(StateEstimate(attitude=roll90, position=[0, 0, 0.9]))


@given(unit_quaternions(), st.floats(0.1, 10.0))
def test_laser_reads_at_least_altitude(q, qz):
    c = laser_cosine(q)
    assume(c > 0.2)
    s = StateEstimate(attitude=q, position=[0.0, 0.0, qz])
    assert predict_laser(s) >= qz * (1 - 1e-15)
    if abs(c - 1.0) > 1e-9:
        assert predict_laser(s) > qz


def test_laser_equals_altitude_exactly_when_level():
    for yaw in (0.0, 1.0, -2.5):
        assert predict_laser(StateEstimate(attitude=yaw_quat(yaw), position=[0, 0, 1.3])) == pytest.approx(1.3, rel=1e-15)


def test_laser_cosine_matches_dcm():
    q = quat_from_euler(0.4, -0.3, 1.0)
    assert laser_cosine(q) == pytest.approx(quat_to_dcm(q)[2, 2], abs=1e-15)


def test_baro_examples():
    assert predict_baro(StateEstimate(position=[0, 0, 0.9]), 0.0) == pytest.approx(0.9)
    assert predict_baro(StateEstimate(position=[0, 0, 0.9]), 100.0) == pytest.approx(100.9)
    assert predict_baro(StateEstimate(position=[0, 0, 1.2]), -3.5) == pytest.approx(-2.3)
    H = baro_jacobian(StateEstimate())
    expected = np.zeros(ERROR_DIM)
    expected[POS_Z] = 1.0
    np.testing.assert_array_equal(H, expected)


def test_mag_examples():
    m_ref = magnetic_reference()
    np.testing.assert_array_equal(m_ref, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(predict_mag(StateEstimate(), m_ref), m_ref, atol=1e-15)
    np.testing.assert_allclose(predict_mag(StateEstimate(attitude=QUARTER_YAW), m_ref), [0.0, -1.0, 0.0], atol=1e-15)


@given(unit_quaternions(), st.floats(-math.pi, math.pi))
def test_mag_prediction_is_unit(q, declination):
    assert np.linalg.norm(predict_mag(StateEstimate(attitude=q), magnetic_reference(declination))) == pytest.approx(1.0, abs=1e-12)


def test_mag_jacobian_couples_attitude_only():
    H = mag_jacobian(StateEstimate(attitude=quat_from_euler(0.1, 0.2, 0.3)), magnetic_reference(0.2))
    assert H.shape == (3, ERROR_DIM)
    np.testing.assert_array_equal(H[:, 3:], 0.0)


def test_mag_observation_is_normalized():
    assert np.linalg.norm(MagObservation([3.0, 4.0, 0.0], 0.0).m) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        MagObservation([0.0, 0.0, 0.0], 0.0)


def test_flow_jacobian_against_finite_differences():
    rng = np.random.default_rng(3)
    model, analytic = MODELS["flow"]
    for _ in range(200):
        case = random_case(rng)
        ok, _ = compare(flow_jacobian(case.state), numeric_jacobian(model(case), case.state))
        assert ok


@pytest.mark.parametrize("name", ["range", "laser", "mag", "baro"])
def test_measurement_jacobians_against_finite_differences(name):
    rng = np.random.default_rng(11)
    model, analytic = MODELS[name]
    for _ in range(200):
        case = random_case(rng)
        ok, ratio = compare(analytic(case), numeric_jacobian(model(case), case.state))
        assert ok, ratio


def test_reference_models_agree_with_production_predictions():
    # The finite-difference oracle evaluates independent extended-precision
    # models; they must describe the same functions as the filter's.
    from uwbfusion.jacobian_check import _RefState, ref_baro, ref_flow, ref_laser, ref_mag, ref_range
    rng = np.random.default_rng(5)
    for _ in range(200):
        c = random_case(rng)
        x = _RefState.of(c.state)
        s = c.state
        assert float(ref_range(c)(x)) == pytest.approx(predict_range(s, c.target_attitude, c.requester, c.responder), abs=1e-12)
        np.testing.assert_allclose(ref_flow(c)(x).astype(float), predict_flow(s), atol=1e-12)
        assert float(ref_laser(c)(x)) == pytest.approx(predict_laser(s), abs=1e-12)
        assert float(ref_baro(c)(x)) == pytest.approx(predict_baro(s, c.b0), abs=1e-12)
        np.testing.assert_allclose(ref_mag(c)(x).astype(float), predict_mag(s, c.m_ref), atol=1e-12)
