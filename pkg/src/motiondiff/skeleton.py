"""Kinematic tree definition and forward kinematics.

Rotations compose parent-to-child (world = world_parent * local); a child's
position is parent position + parent world rotation applied to the child's
rest offset. The root joint sits exactly at the pose's root position.
"""

from dataclasses import dataclass

import numpy as np

from . import rotations
from .validation import check_array


@dataclass(frozen=True)
class Skeleton:
    """Joint hierarchy: topologically sorted, exactly one root at index 0."""

    parents: np.ndarray          # (J,) int, -1 for the root
    offsets: np.ndarray          # (J, 3) rest offset from parent
    foot_joints: np.ndarray      # (4,) indices: L ankle, R ankle, L foot, R foot
    names: tuple = ()

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=int)
        offsets = check_array(self.offsets, "offsets", shape=(len(parents), 3))
        feet = np.asarray(self.foot_joints, dtype=int)
        if parents[0] != -1 or np.count_nonzero(parents == -1) != 1:
            raise ValueError("skeleton must have exactly one root, at index 0")
        for j in range(1, len(parents)):
            if not 0 <= parents[j] < j:
                raise ValueError(f"joint {j}: parent {parents[j]} breaks topological order")
        if feet.shape != (4,) or len(set(feet.tolist())) != 4:
            raise ValueError("foot_joints must be 4 distinct indices")
        if feet.min() < 0 or feet.max() >= len(parents):
            raise ValueError("foot_joints out of range")
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "foot_joints", feet)

    @property
    def joint_count(self):
        return len(self.parents)


@dataclass
class Pose:
    """One frame: root position (3,) and J local unit quaternions (J, 4)."""

    root_position: np.ndarray
    joint_rotations: np.ndarray

    def __post_init__(self):
        self.root_position = check_array(self.root_position, "root_position", shape=(3,))
        self.joint_rotations = check_array(
            self.joint_rotations, "joint_rotations", ndim=2
        )
        if self.joint_rotations.shape[1] != 4:
            raise ValueError("joint_rotations must be (J, 4) quaternions")


def forward_kinematics(skel, root_positions, joint_rotations):
    """World joint positions from local quaternion rotations.

    root_positions: (..., 3); joint_rotations: (..., J, 4).
    Returns positions (..., J, 3). Also accepts a Pose via fk_pose.
    """
    root_positions = np.asarray(root_positions, dtype=float)
    joint_rotations = np.asarray(joint_rotations, dtype=float)
    batch = joint_rotations.shape[:-2]
    J = joint_rotations.shape[-2]
    if J != skel.joint_count:
        raise ValueError(f"pose has {J} joints, skeleton has {skel.joint_count}")

    world_q = np.empty(batch + (J, 4))
    positions = np.empty(batch + (J, 3))
    world_q[..., 0, :] = joint_rotations[..., 0, :]
    positions[..., 0, :] = root_positions
    for j in range(1, J):
        p = skel.parents[j]
        world_q[..., j, :] = rotations.quat_multiply(
            world_q[..., p, :], joint_rotations[..., j, :]
        )
        positions[..., j, :] = positions[..., p, :] + rotations.quat_rotate(
            world_q[..., p, :], skel.offsets[j]
        )
    return positions


def fk_pose(skel, pose):
    """Forward kinematics for a single Pose; returns (J, 3)."""
    return forward_kinematics(skel, pose.root_position, pose.joint_rotations)


def fk_directional_derivative(skel, pose, d_root, d_quats):
    """Analytic directional derivative of FK along a pose-space direction.

    The pose space is (root_position, raw quaternion components); FK is
    extended to non-unit quaternions through the normalizing rotation
    formula, which makes it differentiable in the raw components.
    Returns (J, 3).
    """
    q = np.asarray(pose.joint_rotations, dtype=float)
    dq = check_array(d_quats, "d_quats", shape=q.shape)
    d_root = check_array(d_root, "d_root", shape=(3,))
    J = skel.joint_count

    R = np.empty((J, 3, 3))
    dR = np.empty((J, 3, 3))
    for j in range(J):
        R[j], dR[j] = _quat_to_matrix_jvp(q[j], dq[j])

    world_R = np.empty((J, 3, 3))
    d_world_R = np.empty((J, 3, 3))
    pos = np.empty((J, 3))
    d_pos = np.empty((J, 3))
    world_R[0], d_world_R[0] = R[0], dR[0]
    pos[0], d_pos[0] = pose.root_position, d_root
    for j in range(1, J):
        p = skel.parents[j]
        world_R[j] = world_R[p] @ R[j]
        d_world_R[j] = d_world_R[p] @ R[j] + world_R[p] @ dR[j]
        off = skel.offsets[j]
        pos[j] = pos[p] + world_R[p] @ off
        d_pos[j] = d_pos[p] + d_world_R[p] @ off
    return d_pos


def fk_jacobian_check(skel, pose, d_root, d_quats, h=1e-5):
    """Compare the analytic FK directional derivative with central differences.

    Returns (analytic, finite_difference, relative_error).
    """
    analytic = fk_directional_derivative(skel, pose, d_root, d_quats)

    def _eval(eps):
        root = pose.root_position + eps * np.asarray(d_root, dtype=float)
        quats = pose.joint_rotations + eps * np.asarray(d_quats, dtype=float)
        norms = np.linalg.norm(quats, axis=-1, keepdims=True)
        return forward_kinematics(skel, root, quats / norms)

    fd = (_eval(h) - _eval(-h)) / (2.0 * h)
    scale = max(1.0, np.abs(analytic).max(), np.abs(fd).max())
    rel = np.abs(analytic - fd).max() / scale
    return analytic, fd, rel


def bone_lengths(skel, positions):
    """Per-bone lengths |pos_child - pos_parent| for joints 1..J-1."""
    positions = np.asarray(positions, dtype=float)
    child = positions[..., 1:, :]
    parent = positions[..., skel.parents[1:], :]
    return np.linalg.norm(child - parent, axis=-1)


def chain_skeleton(joint_count, bone_length=0.3, direction=(0.0, -1.0, 0.0)):
    """A single chain of joints, each offset by bone_length along direction.

    With fewer than 5 joints the foot set is simply the last joints padded
    from the front (4 distinct indices are required).
    """
    if joint_count < 2:
        raise ValueError("chain needs at least 2 joints")
    direction = np.asarray(direction, dtype=float)
    offsets = np.zeros((joint_count, 3))
    offsets[1:] = direction * bone_length
    parents = np.arange(-1, joint_count - 1)
    if joint_count >= 4:
        feet = np.arange(joint_count - 4, joint_count)
    else:
        raise ValueError("chain_skeleton requires at least 4 joints for foot indices")
    return Skeleton(parents=parents, offsets=offsets, foot_joints=feet)


# Schematic 24-joint humanoid with the standard SMPL kinematic tree. The
# offsets are rounded rest-pose values in dimensionless length units (not
# fitted to any body model); they exist so tests and demos have concrete,
# documented numbers. Load real skeletons from file for real data.
_HUMANOID_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21]
_HUMANOID_NAMES = (
    "pelvis", "hip_l", "hip_r", "spine1", "knee_l", "knee_r", "spine2",
    "ankle_l", "ankle_r", "spine3", "foot_l", "foot_r", "neck",
    "collar_l", "collar_r", "head", "shoulder_l", "shoulder_r",
    "elbow_l", "elbow_r", "wrist_l", "wrist_r", "hand_l", "hand_r",
)
_HUMANOID_OFFSETS = [
    [0.000, 0.000, 0.000],
    [0.070, -0.080, 0.000],
    [-0.070, -0.080, 0.000],
    [0.000, 0.110, -0.010],
    [0.040, -0.380, 0.000],
    [-0.040, -0.380, 0.000],
    [0.000, 0.140, 0.000],
    [-0.010, -0.400, -0.010],
    [0.010, -0.400, -0.010],
    [0.000, 0.060, 0.000],
    [0.030, -0.060, 0.130],
    [-0.030, -0.060, 0.130],
    [0.000, 0.210, -0.030],
    [0.080, 0.110, -0.010],
    [-0.080, 0.110, -0.010],
    [0.000, 0.090, 0.030],
    [0.090, 0.050, -0.010],
    [-0.090, 0.050, -0.010],
    [0.260, 0.000, -0.010],
    [-0.260, 0.000, -0.010],
    [0.250, 0.000, 0.000],
    [-0.250, 0.000, 0.000],
    [0.090, 0.000, 0.000],
    [-0.090, 0.000, 0.000],
]


def default_skeleton():
    """Bundled 24-joint humanoid (feet: ankle_l, ankle_r, foot_l, foot_r)."""
    return Skeleton(
        parents=np.array(_HUMANOID_PARENTS),
        offsets=np.array(_HUMANOID_OFFSETS),
        foot_joints=np.array([7, 8, 10, 11]),
        names=_HUMANOID_NAMES,
    )


def _quat_to_matrix_jvp(q, dq):
    """Value and directional derivative of the normalizing quat-to-matrix map."""
    s = float(np.dot(q, q))
    ds = 2.0 * float(np.dot(q, dq))
    m = _quat_outer_matrix(q, q)
    dm = 2.0 * _quat_outer_matrix(q, dq)
    R = m / s
    dR = (dm * s - m * ds) / (s * s)
    return R, dR


def _quat_outer_matrix(p, q):
    """Symmetric bilinear form B(p, q) with B(q, q) = |q|^2 * R(q/|q|)."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q

    def sym(a, b):  # symmetrized product so B is bilinear and symmetric
        return 0.5 * (a + b)

    ww = sym(pw * qw, qw * pw)
    xx = sym(px * qx, qx * px)
    yy = sym(py * qy, qy * py)
    zz = sym(pz * qz, qz * pz)
    xy = sym(px * qy, qx * py)
    xz = sym(px * qz, qx * pz)
    yz = sym(py * qz, qy * pz)
    wx = sym(pw * qx, qw * px)
    wy = sym(pw * qy, qw * py)
    wz = sym(pw * qz, qw * pz)
    return np.array(
        [
            [ww + xx - yy - zz, 2 * (xy - wz), 2 * (xz + wy)],
            [2 * (xy + wz), ww - xx + yy - zz, 2 * (yz - wx)],
            [2 * (xz - wy), 2 * (yz + wx), ww - xx - yy + zz],
        ]
    )
