"""Rotation representations: unit quaternions (w, x, y, z), 3x3 matrices and
the continuous 6D form (first two matrix columns, concatenated).

Everything is vectorised over leading dimensions. Quaternions returned by
this module are canonicalised so the scalar part is non-negative.
"""
import numpy as np

from .errors import DegenerateRotationError, ShapeError

_DEGENERATE_TOL = 1e-8

REPRESENTATIONS = ("quat", "rot6d", "matrix")


def _check_last(x, size, name):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (size,):
        raise ShapeError(f"{name}: expected trailing dimension {size}, got shape {x.shape}")
    return x


def canonicalize_quat(q):
    """Flip quaternions so the first non-zero component (w first) is positive."""
    q = _check_last(q, 4, "quaternion")
    sign = np.ones(q.shape[:-1])
    undecided = np.ones(q.shape[:-1], dtype=bool)
    for i in range(4):
        c = q[..., i]
        decide = undecided & (c != 0.0)
        sign = np.where(decide & (c < 0.0), -1.0, sign)
        undecided &= ~decide
    return q * sign[..., None]


def normalize_quat(q):
    q = _check_last(q, 4, "quaternion")
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < _DEGENERATE_TOL):
        raise DegenerateRotationError("zero-norm quaternion")
    return canonicalize_quat(q / n)


def quat_identity(shape=()):
    q = np.zeros(tuple(shape) + (4,))
    q[..., 0] = 1.0
    return q


def quat_conj(q):
    q = _check_last(q, 4, "quaternion")
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b):
    """Hamilton product a*b (apply b first, then a)."""
    a = _check_last(a, 4, "quaternion")
    b = _check_last(b, 4, "quaternion")
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_apply(q, v):
    """Rotate vectors v (..., 3) by unit quaternions q (..., 4)."""
    q = _check_last(q, 4, "quaternion")
    v = _check_last(v, 3, "vector")
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def axis_angle_to_quat(axis, angle):
    axis = _check_last(axis, 3, "axis")
    angle = np.asarray(angle, dtype=np.float64)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.any(n < _DEGENERATE_TOL):
        raise DegenerateRotationError("zero-length rotation axis")
    half = 0.5 * angle[..., None]
    q = np.concatenate([np.cos(half), np.sin(half) * axis / n], axis=-1)
    return canonicalize_quat(q)


def quat_to_matrix(q):
    q = _check_last(q, 4, "quaternion")
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
        2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
        2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m):
    """Shepperd's method; picks the largest of the four squared components."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ShapeError(f"rotation matrix: expected trailing (3, 3), got {m.shape}")
    m00, m11, m22 = m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]
    # 4*w^2, 4*x^2, 4*y^2, 4*z^2
    cand = np.stack([
        1 + m00 + m11 + m22,
        1 + m00 - m11 - m22,
        1 - m00 + m11 - m22,
        1 - m00 - m11 + m22,
    ], axis=-1)
    pick = np.argmax(cand, axis=-1)
    s = 2.0 * np.sqrt(np.maximum(np.take_along_axis(cand, pick[..., None], -1)[..., 0], 1e-300))
    d21 = m[..., 2, 1] - m[..., 1, 2]
    d02 = m[..., 0, 2] - m[..., 2, 0]
    d10 = m[..., 1, 0] - m[..., 0, 1]
    s01 = m[..., 0, 1] + m[..., 1, 0]
    s02 = m[..., 0, 2] + m[..., 2, 0]
    s12 = m[..., 1, 2] + m[..., 2, 1]
    options = np.stack([
        np.stack([0.25 * s, d21 / s, d02 / s, d10 / s], -1),
        np.stack([d21 / s, 0.25 * s, s01 / s, s02 / s], -1),
        np.stack([d02 / s, s01 / s, 0.25 * s, s12 / s], -1),
        np.stack([d10 / s, s02 / s, s12 / s, 0.25 * s], -1),
    ], axis=-2)
    q = np.take_along_axis(options, pick[..., None, None], axis=-2)[..., 0, :]
    return normalize_quat(q)


def matrix_to_rot6d(m):
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ShapeError(f"rotation matrix: expected trailing (3, 3), got {m.shape}")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def rot6d_to_matrix(r):
    """Gram-Schmidt on the two stored columns.

    Raises DegenerateRotationError when the first column is (near) zero or
    the second column is (near) parallel to it.
    """
    r = _check_last(r, 6, "rot6d")
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < _DEGENERATE_TOL):
        raise DegenerateRotationError("rot6d first column is near zero")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    scale = np.maximum(np.linalg.norm(a2, axis=-1, keepdims=True), 1.0)
    if np.any(n2 < _DEGENERATE_TOL * scale):
        raise DegenerateRotationError("rot6d columns are near parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def quat_to_rot6d(q):
    return matrix_to_rot6d(quat_to_matrix(normalize_quat(q)))


def rot6d_to_quat(r):
    return matrix_to_quat(rot6d_to_matrix(r))


def _validate_matrix(m, tol=1e-6):
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ShapeError(f"rotation matrix: expected trailing (3, 3), got {m.shape}")
    eye = np.eye(3)
    err = np.abs(np.swapaxes(m, -1, -2) @ m - eye).max() if m.size else 0.0
    if err > tol or (m.size and np.any(np.linalg.det(m) < 0)):
        raise DegenerateRotationError(f"matrix is not a proper rotation (orthonormality error {err:.2e})")
    return m


def convert_rotation(value, source, target):
    """Convert rotations between 'quat', 'rot6d' and 'matrix'."""
    if source not in REPRESENTATIONS or target not in REPRESENTATIONS:
        raise ValueError(f"unknown representation {source!r} -> {target!r}")
    if source == "quat":
        q = np.asarray(value, dtype=np.float64)
        q = _check_last(q, 4, "quaternion")
        if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > 1e-6):
            raise DegenerateRotationError("quaternion is not unit length")
        m = quat_to_matrix(normalize_quat(q))
    elif source == "rot6d":
        m = rot6d_to_matrix(value)
    else:
        m = _validate_matrix(value)

    if target == "matrix":
        return m
    if target == "rot6d":
        return matrix_to_rot6d(m)
    if source == "quat":
        return normalize_quat(value)
    return matrix_to_quat(m)
