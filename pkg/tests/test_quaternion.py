import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import rotation_vectors, unit_quaternions, vec3
from uwbfusion.quaternion import (
    IDENTITY,
    attitude_error,
    cross,
    euler_from_quat,
    is_unit,
    quat_conjugate,
    quat_from_euler,
    quat_multiply,
    quat_to_dcm,
    quat_to_rotvec,
    renormalize,
    right_jacobian,
    rotate,
    rotvec_to_quat,
    skew,
    so3_exp,
    so3_log,
    wrap_angle,
    yaw_quat,
)
from uwbfusion.state import (
    ERROR_DIM,
    StateEstimate,
    covariance_ok,
    initial_covariance,
    inject_error,
    symmetrize,
)


def test_identity_is_left_neutral():
    r = np.array([0.5, 0.5, -0.5, 0.5])
    np.testing.assert_array_equal(quat_multiply(IDENTITY, r), r)


def test_i_squared_is_minus_one():
    i = np.array([0.0, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(quat_multiply(i, i), [-1.0, 0.0, 0.0, 0.0])


def test_product_of_random_unit_quaternions_is_unit():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p, r = (v / np.linalg.norm(v) for v in rng.normal(size=(2, 4)))
        assert abs(np.linalg.norm(quat_multiply(p, r)) - 1.0) < 1e-12


def test_identity_dcm():
    np.testing.assert_array_equal(quat_to_dcm(IDENTITY), np.eye(3))


def test_quarter_turn_yaw_maps_x_to_y():
    q = np.array([math.sqrt(0.5), 0.0, 0.0, math.sqrt(0.5)])
    np.testing.assert_allclose(quat_to_dcm(q) @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


def test_dcm_rejects_non_unit_input():
    with pytest.raises(ValueError):
        quat_to_dcm([1.0, 0.1, 0.0, 0.0])


@given(unit_quaternions())
def test_dcm_is_orthonormal(q):
    R = quat_to_dcm(q)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_dcm_of_product_is_product_of_dcms():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p, r = (v / np.linalg.norm(v) for v in rng.normal(size=(2, 4)))
        np.testing.assert_allclose(quat_to_dcm(quat_multiply(p, r)), quat_to_dcm(p) @ quat_to_dcm(r), atol=1e-9)


@given(unit_quaternions(), vec3)
def test_rotation_preserves_norm(q, v):
    assert abs(np.linalg.norm(rotate(q, v)) - np.linalg.norm(v)) <= 1e-9 * max(1.0, np.linalg.norm(v))


def test_renormalize_examples():
    np.testing.assert_array_equal(renormalize([2.0, 0.0, 0.0, 0.0]), [1.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(renormalize([1.0, 1.0, 1.0, 1.0]), [0.5, 0.5, 0.5, 0.5], rtol=0, atol=1e-16)


@given(unit_quaternions())
def test_renormalize_leaves_unit_input_unchanged(q):
    np.testing.assert_allclose(renormalize(q), q, rtol=0, atol=1e-15)


def test_renormalize_rejects_collapsed_norm():
    with pytest.raises(ValueError):
        renormalize([1e-9, 0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        renormalize([math.nan, 0.0, 0.0, 0.0])


def test_conjugate_inverts_unit_quaternion():
    q = quat_from_euler(0.3, -0.2, 1.1)
    np.testing.assert_allclose(quat_multiply(q, quat_conjugate(q)), IDENTITY, atol=1e-15)


@given(rotation_vectors())
def test_rotvec_round_trip(phi):
    np.testing.assert_allclose(quat_to_rotvec(rotvec_to_quat(phi)), phi, atol=1e-12)
    assert is_unit(rotvec_to_quat(phi))


@given(rotation_vectors(max_angle=3.0))
def test_so3_log_inverts_exp(phi):
    np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, atol=1e-9)


def test_exp_matches_rodrigues():
    phi = np.array([0.3, -0.4, 1.2])
    a = np.linalg.norm(phi)
    K = skew(phi / a)
    expected = np.eye(3) + math.sin(a) * K + (1 - math.cos(a)) * K @ K
    np.testing.assert_allclose(so3_exp(phi), expected, atol=1e-14)


@given(rotation_vectors(max_angle=2.5), vec3)
def test_right_jacobian_against_finite_differences(phi, d):
    d = 1e-6 * d / max(np.linalg.norm(d), 1e-12)
    lhs = so3_exp(phi + d)
    rhs = so3_exp(phi) @ so3_exp(right_jacobian(phi) @ d)
    assert np.max(np.abs(lhs - rhs)) < 1e-11


@given(vec3, vec3)
def test_cross_matches_numpy(a, b):
    np.testing.assert_allclose(cross(a, b), np.cross(a, b), atol=1e-12)
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-12)


def test_euler_round_trip():
    for angles in [(0.1, -0.2, 0.3), (-1.0, 0.5, 3.0), (0.0, 0.0, -2.5)]:
        np.testing.assert_allclose(euler_from_quat(quat_from_euler(*angles)), angles, atol=1e-12)


def test_yaw_quat_and_wrap():
    assert euler_from_quat(yaw_quat(0.7))[2] == pytest.approx(0.7)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    np.testing.assert_allclose(attitude_error(yaw_quat(0.2), yaw_quat(0.1)), [0, 0, 0.1], atol=1e-12)


# -- state and covariance ----------------------------------------------------


def test_state_arrays_are_read_only():
    s = StateEstimate(position=[1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        s.position[0] = 5.0


def test_inject_error_applies_global_attitude_error():
    s = StateEstimate(attitude=quat_from_euler(0.1, 0.2, 0.3))
    dx = np.zeros(ERROR_DIM)
    dx[:3] = [0.0, 0.0, 0.05]
    out = inject_error(s, dx)
    np.testing.assert_allclose(quat_to_dcm(out.attitude), so3_exp(dx[:3]) @ quat_to_dcm(s.attitude), atol=1e-14)
    assert is_unit(out.attitude)


def test_inject_error_is_additive_on_vector_blocks():
    s = StateEstimate(velocity=[1, 2, 3], position=[4, 5, 6], gyro_bias=[0.01, 0, 0])
    dx = np.arange(ERROR_DIM, dtype=float) * 0.1
    dx[:3] = 0.0
    out = inject_error(s, dx)
    np.testing.assert_allclose(out.velocity, [1.3, 2.4, 3.5])
    np.testing.assert_allclose(out.position, [4.6, 5.7, 6.8])
    np.testing.assert_allclose(out.gyro_bias, [0.91, 1.0, 1.1])


@settings(max_examples=50)
@given(arrays(np.float64, (ERROR_DIM, ERROR_DIM), elements=st.floats(-1e3, 1e3)))
def test_symmetrize_is_idempotent(A):
    once = symmetrize(A)
    np.testing.assert_array_equal(symmetrize(once), once)


def test_covariance_checks():
    P = initial_covariance(0.1, 0.2, [0.3, 0.3, 0.1], 0.01)
    assert P.shape == (12, 12)
    assert P[8, 8] == pytest.approx(0.01)
    assert covariance_ok(P)
    bad = P.copy()
    bad[0, 0] = -1.0
    assert not covariance_ok(bad)
    skewed = P.copy()
    skewed[0, 1] = 1e-3
    assert not covariance_ok(skewed)
    nan = P.copy()
    nan[3, 3] = math.nan
    assert not covariance_ok(nan)
