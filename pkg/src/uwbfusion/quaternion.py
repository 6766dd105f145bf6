"""Quaternion and rotation helpers.

Quaternions are Hamilton, real part first: ``[w, x, y, z]``. ``quat_to_dcm(q)``
returns the matrix that maps body-frame coordinates into the reference frame,
so ``quat_to_dcm(q).T`` is the inverse rotation.
"""

from __future__ import annotations

import math

import numpy as np

UNIT_TOLERANCE = 1e-9
DCM_INPUT_TOLERANCE = 1e-6
MIN_NORM = 1e-6

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_multiply(p, r) -> np.ndarray:
    """Hamilton product ``p * r``."""
    pw, px, py, pz = p
    rw, rx, ry, rz = r
    return np.array([
        pw * rw - px * rx - py * ry - pz * rz,
        pw * rx + px * rw + py * rz - pz * ry,
        pw * ry - px * rz + py * rw + pz * rx,
        pw * rz + px * ry - py * rx + pz * rw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_norm(q) -> float:
    return math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


def is_unit(q, tol: float = UNIT_TOLERANCE) -> bool:
    return abs(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3] - 1.0) <= tol


def renormalize(q) -> np.ndarray:
    """Scale ``q`` to unit norm.

    Raises ``ValueError`` when the norm has collapsed, which in the filter
    means the attitude estimate has diverged.
    """
    n = quat_norm(q)
    if not math.isfinite(n) or n <= MIN_NORM:
        raise ValueError(f"cannot renormalize quaternion with norm {n!r}")
    return np.asarray(q, dtype=float) / n


def quat_to_dcm(q, check: bool = True) -> np.ndarray:
    if check and not is_unit(q, DCM_INPUT_TOLERANCE):
        raise ValueError(f"quaternion is not unit: norm {quat_norm(q)!r}")
    w, x, y, z = q
    ww, xx, yy, zz = w * w, x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array([
        [ww + xx - yy - zz, 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), ww - xx + yy - zz, 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), ww - xx - yy + zz],
    ])


def rotate(q, v) -> np.ndarray:
    """Rotate ``v`` from the body frame of ``q`` into the reference frame."""
    return quat_to_dcm(q, check=False) @ np.asarray(v, dtype=float)


def skew(v) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def cross(a, b) -> np.ndarray:
    """3-vector cross product without ``np.cross``'s axis handling overhead."""
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def rotvec_to_quat(phi) -> np.ndarray:
    """Quaternion exponential of a rotation vector (exact for any angle)."""
    phi = np.asarray(phi, dtype=float)
    angle = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    half = 0.5 * angle
    if angle < 1e-8:
        # sin(a/2)/a to second order
        k = 0.5 - angle * angle / 48.0
    else:
        k = math.sin(half) / angle
    return np.array([math.cos(half), k * phi[0], k * phi[1], k * phi[2]])


def quat_to_rotvec(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    vnorm = math.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if vnorm < 1e-12:
        return 2.0 * q[1:] / q[0]
    angle = 2.0 * math.atan2(vnorm, q[0])
    return q[1:] * (angle / vnorm)


def so3_exp(phi) -> np.ndarray:
    return quat_to_dcm(rotvec_to_quat(phi), check=False)


def so3_log(R) -> np.ndarray:
    """Rotation vector of a rotation matrix (valid away from a half turn)."""
    R = np.asarray(R, dtype=float)
    cos_a = min(1.0, max(-1.0, 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)))
    angle = math.acos(cos_a)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-6:
        return 0.5 * w * (1.0 + angle * angle / 6.0)
    return w * (angle / (2.0 * math.sin(angle)))


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): ``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    a2 = float(phi @ phi)
    K = skew(phi)
    if a2 < 1e-10:
        return np.eye(3) - 0.5 * K + (1.0 / 6.0) * (K @ K)
    a = math.sqrt(a2)
    return (np.eye(3) - (1.0 - math.cos(a)) / a2 * K
            + (a - math.sin(a)) / (a2 * a) * (K @ K))


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Z-Y-X (yaw, then pitch, then roll) Euler angles to a quaternion."""
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


def euler_from_quat(q) -> tuple[float, float, float]:
    w, x, y, z = q
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    pitch = math.asin(max(-1.0, min(1.0, 2.0 * (w * y - z * x))))
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return roll, pitch, yaw


def yaw_quat(yaw: float) -> np.ndarray:
    return np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)])


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def attitude_error(q_est, q_true) -> np.ndarray:
    """World-frame rotation vector taking ``q_true`` to ``q_est``."""
    R = quat_to_dcm(q_est, check=False) @ quat_to_dcm(q_true, check=False).T
    return so3_log(R)
