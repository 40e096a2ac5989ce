"""Rotation conversions among quaternions, axis-angle, Euler angles, matrices, and 6D.

Conventions, fixed package-wide:
  - quaternions are scalar-first (w, x, y, z); q and -q describe the same rotation
  - rotation matrices are 3x3, row-major, acting on column vectors (p' = R p)
  - Euler angles are intrinsic X-Y-Z, radians: R = Rx(ex) @ Ry(ey) @ Rz(ez)
  - axis-angle is the rotation vector (axis * angle), angle canonically in [0, pi]
  - 6D is the first two columns of a rotation matrix, column-major (a1 then a2)

All functions are vectorized over leading dimensions and are pure.
"""

import numpy as np

from .errors import DegenerateFeatureError, InvalidRotationError

GIMBAL_COS_TOL = 1e-6  # |cos(pitch)| below this counts as gimbal lock


def normalize_quat(q):
    """Scale quaternions to unit norm (no hemisphere change)."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise DegenerateFeatureError("quaternion with near-zero norm")
    return q / norm


def quat_multiply(a, b):
    """Hamilton product a*b, composing rotations (a applied after b)."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_rotate(q, v):
    """Rotate 3-vectors v by unit quaternions q."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_to_matrix(q):
    """Convert unit quaternions (..., 4) to rotation matrices (..., 3, 3).

    Sign-invariant: q and -q map to the same matrix. Raises
    InvalidRotationError when the norm deviates from 1 by more than 1e-6.
    """
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise InvalidRotationError(
            f"quaternion norm deviates from 1 by {np.abs(norm - 1.0).max():.2e}"
        )
    w, x, y, z = np.moveaxis(q, -1, 0)
    two_s = 2.0 / np.sum(q * q, axis=-1)
    m = np.stack(
        [
            1 - two_s * (y * y + z * z),
            two_s * (x * y - z * w),
            two_s * (x * z + y * w),
            two_s * (x * y + z * w),
            1 - two_s * (x * x + z * z),
            two_s * (y * z - x * w),
            two_s * (x * z - y * w),
            two_s * (y * z + x * w),
            1 - two_s * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m):
    """Convert rotation matrices (..., 3, 3) to unit quaternions (..., 4).

    Uses the numerically stable largest-pivot variant; the returned
    hemisphere is whichever the pivot produces (use enforce_quat_continuity
    for sequences).
    """
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    m = m.reshape((-1, 3, 3))
    q = np.empty((m.shape[0], 4))

    tr = np.trace(m, axis1=-2, axis2=-1)
    choice = np.argmax(
        np.stack([tr, m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]], axis=-1), axis=-1
    )

    sel = choice == 0
    if np.any(sel):
        s = np.sqrt(tr[sel] + 1.0) * 2.0
        q[sel, 0] = 0.25 * s
        q[sel, 1] = (m[sel, 2, 1] - m[sel, 1, 2]) / s
        q[sel, 2] = (m[sel, 0, 2] - m[sel, 2, 0]) / s
        q[sel, 3] = (m[sel, 1, 0] - m[sel, 0, 1]) / s
    sel = choice == 1
    if np.any(sel):
        s = np.sqrt(1.0 + m[sel, 0, 0] - m[sel, 1, 1] - m[sel, 2, 2]) * 2.0
        q[sel, 0] = (m[sel, 2, 1] - m[sel, 1, 2]) / s
        q[sel, 1] = 0.25 * s
        q[sel, 2] = (m[sel, 0, 1] + m[sel, 1, 0]) / s
        q[sel, 3] = (m[sel, 0, 2] + m[sel, 2, 0]) / s
    sel = choice == 2
    if np.any(sel):
        s = np.sqrt(1.0 + m[sel, 1, 1] - m[sel, 0, 0] - m[sel, 2, 2]) * 2.0
        q[sel, 0] = (m[sel, 0, 2] - m[sel, 2, 0]) / s
        q[sel, 1] = (m[sel, 0, 1] + m[sel, 1, 0]) / s
        q[sel, 2] = 0.25 * s
        q[sel, 3] = (m[sel, 1, 2] + m[sel, 2, 1]) / s
    sel = choice == 3
    if np.any(sel):
        s = np.sqrt(1.0 + m[sel, 2, 2] - m[sel, 0, 0] - m[sel, 1, 1]) * 2.0
        q[sel, 0] = (m[sel, 1, 0] - m[sel, 0, 1]) / s
        q[sel, 1] = (m[sel, 0, 2] + m[sel, 2, 0]) / s
        q[sel, 2] = (m[sel, 1, 2] + m[sel, 2, 1]) / s
        q[sel, 3] = 0.25 * s

    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return q.reshape(batch + (4,))


def matrix_to_sixd(m):
    """First two columns of R, column-major: (R00,R10,R20, R01,R11,R21)."""
    m = np.asarray(m, dtype=float)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def sixd_to_matrix(s):
    """Recover a rotation matrix from 6D features by Gram-Schmidt.

    Invariant to positive scaling of either column. Raises
    DegenerateFeatureError when the first column is near zero or the two
    columns are near parallel (tolerance 1e-12).
    """
    s = np.asarray(s, dtype=float)
    a1 = s[..., 0:3]
    a2 = s[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < 1e-12):
        raise DegenerateFeatureError("sixd first column has near-zero norm")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 < 1e-12):
        raise DegenerateFeatureError("sixd columns are near parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def euler_to_matrix(e):
    """Intrinsic X-Y-Z Euler angles (radians) to rotation matrices."""
    e = np.asarray(e, dtype=float)
    cx, cy, cz = np.cos(e[..., 0]), np.cos(e[..., 1]), np.cos(e[..., 2])
    sx, sy, sz = np.sin(e[..., 0]), np.sin(e[..., 1]), np.sin(e[..., 2])
    m = np.stack(
        [
            cy * cz,
            -cy * sz,
            sy,
            sx * sy * cz + cx * sz,
            -sx * sy * sz + cx * cz,
            -sx * cy,
            -cx * sy * cz + sx * sz,
            cx * sy * sz + sx * cz,
            cx * cy,
        ],
        axis=-1,
    )
    return m.reshape(e.shape[:-1] + (3, 3))


def matrix_to_euler(m, return_gimbal=False):
    """Extract intrinsic X-Y-Z Euler angles from rotation matrices.

    At gimbal lock (|pitch| = pi/2) the x-component (roll) is set to 0 and
    the remaining freedom goes to the z-component; the lock is reported via
    the boolean gimbal mask when return_gimbal is True.
    """
    m = np.asarray(m, dtype=float)
    sy = np.clip(m[..., 0, 2], -1.0, 1.0)
    ey = np.arcsin(sy)
    cy = np.sqrt(np.maximum(0.0, 1.0 - sy * sy))
    gimbal = cy < GIMBAL_COS_TOL

    ex = np.arctan2(-m[..., 1, 2], m[..., 2, 2])
    ez = np.arctan2(-m[..., 0, 1], m[..., 0, 0])
    # at the singularity only ex+ez (or ex-ez) is defined; put it all in ez
    ez_lock = np.arctan2(m[..., 1, 0], m[..., 1, 1])
    ex = np.where(gimbal, 0.0, ex)
    ez = np.where(gimbal, ez_lock, ez)

    e = np.stack([ex, ey, ez], axis=-1)
    if return_gimbal:
        return e, gimbal
    return e


def axis_angle_to_matrix(r):
    """Rodrigues formula for rotation vectors (..., 3); exact at zero."""
    r = np.asarray(r, dtype=float)
    theta2 = np.sum(r * r, axis=-1)
    f1 = _sinc_from_sq(theta2)          # sin(t)/t
    f2 = _versine_from_sq(theta2)       # (1-cos(t))/t^2
    rx, ry, rz = np.moveaxis(r, -1, 0)
    zero = np.zeros_like(rx)
    k = np.stack(
        [zero, -rz, ry, rz, zero, -rx, -ry, rx, zero], axis=-1
    ).reshape(r.shape[:-1] + (3, 3))
    eye = np.broadcast_to(np.eye(3), k.shape)
    f1 = f1[..., None, None]
    f2 = f2[..., None, None]
    return eye + f1 * k + f2 * (k @ k)


def matrix_to_axis_angle(m):
    """Logarithm map to a rotation vector with angle in [0, pi].

    At angle pi the axis sign is made deterministic: the largest-magnitude
    component is nonnegative.
    """
    m = np.asarray(m, dtype=float)
    w = 0.5 * np.stack(
        [
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ],
        axis=-1,
    )
    s = np.linalg.norm(w, axis=-1)  # sin(theta)
    c = 0.5 * (np.trace(m, axis1=-2, axis2=-1) - 1.0)  # cos(theta)
    theta = np.arctan2(s, np.clip(c, -1.0, 1.0))

    near_pi = theta > np.pi - 1e-6
    # generic branch: r = w * theta / sin(theta), smooth through theta -> 0
    scale = np.where(s > 1e-12, theta / np.where(s > 1e-12, s, 1.0), 1.0)
    r = w * scale[..., None]

    if np.any(near_pi):
        # R + I = 2 * outer(axis, axis) at theta = pi
        outer = 0.5 * (m + np.broadcast_to(np.eye(3), m.shape))
        diag = np.clip(np.diagonal(outer, axis1=-2, axis2=-1), 0.0, None)
        axis = np.sqrt(diag)
        # off-diagonals give relative signs; pivot on the largest component
        flat_axis = axis.reshape(-1, 3)
        flat_outer = outer.reshape(-1, 3, 3)
        flat_theta = theta.reshape(-1)
        flat_near = near_pi.reshape(-1)
        flat_r = r.reshape(-1, 3)
        for i in np.nonzero(flat_near)[0]:
            a = flat_axis[i]
            p = int(np.argmax(a))
            if a[p] > 1e-12:
                signed = flat_outer[i, p, :] / a[p]
                signed[p] = a[p]
            else:
                signed = a
            big = int(np.argmax(np.abs(signed)))
            if signed[big] < 0:
                signed = -signed
            n = np.linalg.norm(signed)
            flat_r[i] = signed / (n if n > 0 else 1.0) * flat_theta[i]
        r = flat_r.reshape(r.shape)
    return r


def canonicalize_axis_angle(r):
    """Wrap a rotation vector so its angle lies in [0, pi]."""
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r, axis=-1)
    wrapped = np.mod(theta, 2.0 * np.pi)
    # angles above pi flip to the antipodal axis
    over = wrapped > np.pi
    target = np.where(over, 2.0 * np.pi - wrapped, wrapped)
    sign = np.where(over, -1.0, 1.0)
    safe = np.where(theta > 1e-12, theta, 1.0)
    return r * (sign * target / safe)[..., None]


def quat_to_axis_angle(q):
    """Unit quaternion to rotation vector, angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0.0, -q, q)  # w >= 0 puts angle in [0, pi]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    theta = 2.0 * np.arctan2(s, q[..., 0])
    scale = np.where(s > 1e-12, theta / np.where(s > 1e-12, s, 1.0), 2.0)
    return v * scale[..., None]


def axis_angle_to_quat(r):
    """Rotation vector to unit quaternion (w >= 0 not enforced; w is cos(t/2) >= 0 for t in [0, pi])."""
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r, axis=-1)
    half = 0.5 * theta
    # sin(t/2)/t, smooth at 0 (limit 1/2)
    k = np.where(theta > 1e-12, np.sin(half) / np.where(theta > 1e-12, theta, 1.0), 0.5)
    return np.concatenate([np.cos(half)[..., None], r * k[..., None]], axis=-1)


def quat_to_euler(q, return_gimbal=False):
    return matrix_to_euler(quat_to_matrix(q), return_gimbal=return_gimbal)


def euler_to_quat(e):
    return matrix_to_quat(euler_to_matrix(e))


def enforce_quat_continuity(seq):
    """Flip quaternion signs along axis 0 so consecutive dots are >= 0.

    The first element is unchanged; each output equals +/- its input.
    Idempotent. Works on shape (N, ..., 4).
    """
    seq = np.asarray(seq, dtype=float)
    if seq.shape[0] == 0:
        raise ValueError("empty quaternion sequence")
    out = seq.copy()
    for i in range(1, out.shape[0]):
        dot = np.sum(out[i - 1] * out[i], axis=-1, keepdims=True)
        out[i] = np.where(dot < 0.0, -out[i], out[i])
    return out


def nearest_rotation(m):
    """Project matrices (..., 3, 3) to the nearest rotation (polar/SVD).

    Handles improper inputs (det < 0) by flipping the smallest singular
    direction. Raises DegenerateFeatureError on rank-deficient input.
    """
    m = np.asarray(m, dtype=float)
    u, sv, vt = np.linalg.svd(m)
    if np.any(sv[..., -1] < 1e-12):
        raise DegenerateFeatureError("matrix features are rank deficient")
    det = np.linalg.det(u @ vt)
    flip = np.ones(m.shape[:-2] + (3,))
    flip[..., -1] = np.sign(det)
    return (u * flip[..., None, :]) @ vt


def random_rotations(n, rng, max_angle=np.pi):
    """Uniform-axis random rotations with angle ~ U(0, max_angle), as quaternions."""
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
    angles = rng.uniform(0.0, max_angle, size=(n, 1))
    return axis_angle_to_quat(axes * angles)


def _sinc_from_sq(t2):
    """sin(sqrt(s))/sqrt(s) as a smooth function of s = theta^2."""
    small = t2 < 1e-8
    safe = np.where(small, 1.0, t2)
    t = np.sqrt(safe)
    series = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
    return np.where(small, series, np.sin(t) / t)


def _versine_from_sq(t2):
    """(1 - cos(sqrt(s)))/s as a smooth function of s = theta^2."""
    small = t2 < 1e-8
    safe = np.where(small, 1.0, t2)
    t = np.sqrt(safe)
    series = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    return np.where(small, series, 2.0 * np.sin(0.5 * t) ** 2 / safe)
