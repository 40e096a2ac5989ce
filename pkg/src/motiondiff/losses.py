"""Training losses: weighted v loss plus geometric terms through decode and FK.

Every loss accepts the prediction either as a plain array (returns a float)
or as an autodiff Var (returns a Var with exact gradients through the
rotation projections and forward kinematics). Reductions follow the loss
definitions: the v loss averages over all D*N entries; the geometric terms
sum squared residuals over feature/joint dimensions within a frame (pair)
and average over frames (pairs).

Internally, predictions are handled with a leading batch axis (B, D, N);
the public single-sample API wraps B = 1.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import skeleton as sk
from .autodiff import Tape, Var
from .errors import DegenerateFeatureError
from .representation import ReprKind

_NEWTON_SCHULZ_ITERS = 30
_POLAR_DET_MIN = 4e-3  # scaled-determinant floor for the Newton-Schulz route


@dataclass
class LossConfig:
    """Weights of the geometric terms; the v term always has weight 1."""

    lambda_pos: float = 1.0
    lambda_vel: float = 1.0
    lambda_fc: float = 1.0
    geometric_enabled: bool = True

    def __post_init__(self):
        for name in ("lambda_pos", "lambda_vel", "lambda_fc"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0")


def v_loss(schedule, v_true, v_pred, t):
    """snr/(snr+1)-weighted MSE, i.e. alpha_bar_t * mean((v - v_hat)^2)."""
    v_true, v_pred, tape, is_var = _paired(v_true, v_pred)
    t = np.atleast_1d(np.asarray(t, dtype=int))
    if np.any(t < 1) or np.any(t > schedule.num_steps):
        raise ValueError("timestep out of schedule range")
    weights = schedule.alpha_bar[t - 1].reshape(-1, 1, 1).astype(v_true.dtype)
    B, D, N = v_true.shape
    if weights.shape[0] not in (1, B):
        raise ValueError("one timestep per batch sample required")
    diff = v_pred - v_true
    out = ad.reduce_sum(diff * diff * weights) / float(B * D * N)
    return out if is_var else float(out.value)


def position_loss(x0, x0_hat, kind, skel):
    """Mean over frames of the squared joint-position error after decoding.

    Positions-kind features bypass FK; rotation kinds are projected to valid
    rotations and run through forward kinematics, differentiably.
    """
    x0, x0_hat, tape, is_var = _paired(x0, x0_hat)
    kind = ReprKind.parse(kind)
    target = _positions_value(x0, kind, skel)
    pred = positions_graph(x0_hat, kind, skel)
    B, N = pred.shape[0], pred.shape[1]
    diff = pred - target
    out = ad.reduce_sum(diff * diff) / float(B * N)
    return out if is_var else float(out.value)


def velocity_loss(x0, x0_hat):
    """Mean over frame pairs of squared frame-difference error (feature space)."""
    x0, x0_hat, tape, is_var = _paired(x0, x0_hat)
    B, D, N = x0.shape
    if N < 2:
        raise ValueError("velocity loss needs at least 2 frames")
    d_true = x0[:, :, 1:] - x0[:, :, :-1]
    d_pred = x0_hat[:, :, 1:] - x0_hat[:, :, :-1]
    diff = d_pred - d_true
    out = ad.reduce_sum(diff * diff) / float(B * (N - 1))
    return out if is_var else float(out.value)


def foot_contact_loss(x0_hat, labels, kind, skel):
    """Penalize predicted foot-joint velocity wherever the contact label is 1."""
    x0_hat, tape, is_var = _single(x0_hat)
    kind = ReprKind.parse(kind)
    B, D, N = x0_hat.shape
    labels = np.asarray(labels, dtype=float)
    if labels.ndim == 2:
        labels = labels[None]
    if labels.shape != (B, N - 1, 4):
        raise ValueError(f"labels must be (N-1, 4) per sample, got {labels.shape}")
    pred = positions_graph(x0_hat, kind, skel)  # (B, N, J, 3)
    feet = ad.getitem(pred, (slice(None), slice(None), skel.foot_joints))
    vel = feet[:, 1:] - feet[:, :-1]            # (B, N-1, 4, 3)
    masked = vel * labels[..., None]
    out = ad.reduce_sum(masked * masked) / float(B * (N - 1))
    return out if is_var else float(out.value)


def total_loss(schedule, v_true, v_pred, t, x0, x0_hat, kind, skel, config,
               contact_labels=None):
    """Weighted sum of all terms; returns (loss, per-term breakdown).

    With geometric terms disabled the result equals the v loss exactly and
    the decode/FK graph is never built.
    """
    is_var = isinstance(v_pred, Var)
    lv = v_loss(schedule, v_true, v_pred, t)
    breakdown = {"v": _as_float(lv)}
    out = lv
    if config.geometric_enabled:
        lp = position_loss(x0, x0_hat, kind, skel)
        lvel = velocity_loss(x0, x0_hat)
        breakdown["pos"] = _as_float(lp)
        breakdown["vel"] = _as_float(lvel)
        out = out + config.lambda_pos * lp + config.lambda_vel * lvel
        if contact_labels is not None:
            lfc = foot_contact_loss(x0_hat, contact_labels, kind, skel)
            breakdown["fc"] = _as_float(lfc)
            out = out + config.lambda_fc * lfc
        else:
            breakdown["fc"] = 0.0
    breakdown["total"] = _as_float(out)
    return (out, breakdown) if is_var else (float(_as_float(out)), breakdown)


def extract_foot_contacts(clip, skel, speed_threshold=0.01, height_threshold=0.05,
                          up_axis=1):
    """Binary (N-1, 4) contact labels for the skeleton's foot joints.

    Label i is 1 iff the foot's speed over frames (i, i+1) is below
    speed_threshold (units/frame) and its height at frame i is below
    height_threshold.
    """
    positions = sk.forward_kinematics(skel, clip.root_positions, clip.joint_rotations)
    return foot_contacts_from_positions(
        positions, skel.foot_joints, speed_threshold, height_threshold, up_axis
    )


def foot_contacts_from_positions(positions, foot_joints, speed_threshold=0.01,
                                 height_threshold=0.05, up_axis=1):
    """Contact labels from precomputed world positions (N, J, 3) or (B, N, J, 3)."""
    positions = np.asarray(positions, dtype=float)
    if positions.shape[-3] < 2:
        raise ValueError("need at least 2 frames to extract contacts")
    feet = positions[..., foot_joints, :]
    speed = np.linalg.norm(feet[..., 1:, :, :] - feet[..., :-1, :, :], axis=-1)
    height = feet[..., :-1, :, up_axis]
    return ((speed < speed_threshold) & (height < height_threshold)).astype(float)


# ---------------------------------------------------------------------------
# differentiable decode + forward kinematics
# ---------------------------------------------------------------------------

def positions_graph(x, kind, skel):
    """World joint positions (B, N, J, 3) from raw features (B, D, N).

    Accepts a Var (differentiable path used inside the losses) or a plain
    array. Rotation projection matches the plain decode: quaternion
    renormalization, 6D Gram-Schmidt, Rodrigues, Euler trig, or polar
    projection (Newton-Schulz; Gram-Schmidt of the first two columns for
    near-singular or improper matrices so training stays total).
    """
    x, tape, _ = _single(x)
    kind = ReprKind.parse(kind)
    B, D, N = x.shape
    if kind is ReprKind.POSITIONS:
        J = D // 3
        return ad.reshape(ad.transpose(x, (0, 2, 1)), (B, N, J, 3))

    w = {ReprKind.ROT6D: 6, ReprKind.QUATERNION: 4, ReprKind.AXIS_ANGLE: 3,
         ReprKind.EULER: 3, ReprKind.ROTMAT: 9}[kind]
    J = D // w - 1
    frames = ad.transpose(x, (0, 2, 1))  # (B, N, D)
    blocks = ad.reshape(frames[:, :, : J * w], (B, N, J, w))
    root = frames[:, :, J * w : J * w + 3]

    if kind is ReprKind.QUATERNION:
        mats = _quat_matrices_graph(blocks)
    elif kind is ReprKind.ROT6D:
        mats = _gram_schmidt_graph(blocks[..., 0:3], blocks[..., 3:6])
    elif kind is ReprKind.AXIS_ANGLE:
        mats = _rodrigues_graph(blocks)
    elif kind is ReprKind.EULER:
        mats = _euler_matrices_graph(blocks)
    else:
        mats = _polar_graph(ad.reshape(blocks, (B, N, J, 3, 3)))
    return _fk_graph(skel, root, mats)


def _fk_graph(skel, root, mats):
    """FK on a graph: root (B, N, 3), local matrices (B, N, J, 3, 3)."""
    J = skel.joint_count
    world = [None] * J
    pos = [None] * J
    world[0] = mats[:, :, 0]
    pos[0] = root
    for j in range(1, J):
        p = skel.parents[j]
        world[j] = ad.matmul(world[p], mats[:, :, j])
        off = skel.offsets[j].reshape(3, 1)
        step = ad.matmul(world[p], off)
        pos[j] = pos[p] + ad.reshape(step, step.shape[:-1])
    return ad.stack(pos, axis=2)  # (B, N, J, 3)


def _quat_matrices_graph(blocks):
    """(B, N, J, 4) raw quaternions to matrices; self-normalizing formula."""
    s2 = ad.reduce_sum(blocks * blocks, axis=-1)
    _check_degenerate(s2.value < 1e-24, "quaternion block norm ~ 0")
    w = blocks[..., 0]
    x = blocks[..., 1]
    y = blocks[..., 2]
    z = blocks[..., 3]
    two_s = 2.0 / s2
    entries = [
        1.0 - two_s * (y * y + z * z),
        two_s * (x * y - z * w),
        two_s * (x * z + y * w),
        two_s * (x * y + z * w),
        1.0 - two_s * (x * x + z * z),
        two_s * (y * z - x * w),
        two_s * (x * z - y * w),
        two_s * (y * z + x * w),
        1.0 - two_s * (x * x + y * y),
    ]
    m = ad.stack(entries, axis=-1)
    return ad.reshape(m, m.shape[:-1] + (3, 3))


def _gram_schmidt_graph(a1, a2):
    """Two raw 3-vectors (..., 3) to an orthonormal frame, columns (b1 b2 b3)."""
    n1sq = ad.reduce_sum(a1 * a1, axis=-1, keepdims=True)
    _check_degenerate(n1sq.value < 1e-24, "sixd first column ~ 0")
    b1 = a1 / ad.sqrt(n1sq)
    dot = ad.reduce_sum(b1 * a2, axis=-1, keepdims=True)
    u2 = a2 - dot * b1
    n2sq = ad.reduce_sum(u2 * u2, axis=-1, keepdims=True)
    _check_degenerate(n2sq.value < 1e-24, "sixd columns parallel")
    b2 = u2 / ad.sqrt(n2sq)
    b3 = _cross_graph(b1, b2)
    return ad.stack([b1, b2, b3], axis=-1)


def _cross_graph(a, b):
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return ad.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def _rodrigues_graph(r):
    """Rotation vectors (..., 3) to matrices; smooth through zero."""
    s = ad.reduce_sum(r * r, axis=-1)
    f1 = ad.sinc_sq(s)
    f2 = ad.versine_sq(s)
    rx, ry, rz = r[..., 0], r[..., 1], r[..., 2]
    zero = rx * 0.0
    k = ad.stack([zero, -rz, ry, rz, zero, -rx, -ry, rx, zero], axis=-1)
    k = ad.reshape(k, k.shape[:-1] + (3, 3))
    k2 = ad.matmul(k, k)
    f1 = ad.reshape(f1, f1.shape + (1, 1))
    f2 = ad.reshape(f2, f2.shape + (1, 1))
    return np.eye(3) + f1 * k + f2 * k2


def _euler_matrices_graph(e):
    """Intrinsic X-Y-Z angles (..., 3) to matrices."""
    cx, cy, cz = ad.cos(e[..., 0]), ad.cos(e[..., 1]), ad.cos(e[..., 2])
    sx, sy, sz = ad.sin(e[..., 0]), ad.sin(e[..., 1]), ad.sin(e[..., 2])
    entries = [
        cy * cz, -(cy * sz), sy,
        sx * sy * cz + cx * sz, -(sx * sy * sz) + cx * cz, -(sx * cy),
        -(cx * sy * cz) + sx * sz, cx * sy * sz + sx * cz, cx * cy,
    ]
    m = ad.stack(entries, axis=-1)
    return ad.reshape(m, m.shape[:-1] + (3, 3))


def _polar_graph(mats):
    """Nearest-rotation projection of (..., 3, 3) raw matrices.

    Well-conditioned matrices with positive determinant go through a
    Newton-Schulz polar iteration (matches the SVD projection to ~1e-12);
    the rest fall back to Gram-Schmidt of the first two columns, keeping
    the training objective total when an untrained net emits improper
    matrices.
    """
    batch = mats.shape[:-2]
    flat = ad.reshape(mats, (-1, 3, 3))
    nf2 = ad.reduce_sum(flat * flat, axis=(-2, -1), keepdims=True)
    _check_degenerate(nf2.value.reshape(batch) < 1e-24, "matrix block ~ 0")
    scaled = flat / ad.sqrt(nf2)
    det = np.linalg.det(scaled.value)
    good = np.nonzero(det >= _POLAR_DET_MIN)[0]
    bad = np.nonzero(det < _POLAR_DET_MIN)[0]

    parts = []
    if good.size:
        x = ad.getitem(scaled, (good,))
        for _ in range(_NEWTON_SCHULZ_ITERS):
            xt = ad.transpose(x, (0, 2, 1))
            x = 0.5 * ad.matmul(x, 3.0 * np.eye(3) - ad.matmul(xt, x))
        parts.append(ad.scatter(x, (good,), flat.shape))
    if bad.size:
        x = ad.getitem(scaled, (bad,))
        frame = _gram_schmidt_graph(x[..., :, 0], x[..., :, 1])
        parts.append(ad.scatter(frame, (bad,), flat.shape))
    out = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    return ad.reshape(out, batch + (3, 3))


def _positions_value(x, kind, skel):
    """Plain-value positions for the loss target (no gradient path)."""
    scratch = Tape()
    return positions_graph(scratch.leaf(np.asarray(x)), kind, skel).value


def _check_degenerate(bad_mask, reason):
    if np.any(bad_mask):
        idx = tuple(int(i[0]) for i in np.nonzero(np.atleast_1d(bad_mask)))
        frame = idx[1] if len(idx) >= 2 else idx[0]
        joint = idx[2] if len(idx) >= 3 else None
        raise DegenerateFeatureError(
            f"{reason} (frame {frame}, joint {joint})", frame=frame, joint=joint
        )


# ---------------------------------------------------------------------------
# input plumbing
# ---------------------------------------------------------------------------

def _as_float_array(x):
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(float)
    return arr


def _single(x):
    """Promote an array or Var to batched (B, D, N) on a tape."""
    if isinstance(x, Var):
        var = x if x.ndim == 3 else ad.reshape(x, (1,) + x.shape)
        return var, x.tape, True
    arr = _as_float_array(x)
    if arr.ndim == 2:
        arr = arr[None]
    tape = Tape()
    return tape.leaf(arr), tape, False


def _paired(target, pred):
    """Wrap (target, pred) with the prediction carrying any gradient."""
    pred_var, tape, is_var = _single(pred)
    target_value = target.value if isinstance(target, Var) else _as_float_array(target)
    if target_value.ndim == 2:
        target_value = target_value[None]
    if target_value.shape != pred_var.shape:
        raise ValueError(
            f"target/prediction shape mismatch: {target_value.shape} vs {pred_var.shape}"
        )
    return target_value, pred_var, tape, is_var


def _as_float(x):
    return float(x.value) if isinstance(x, Var) else float(x)
