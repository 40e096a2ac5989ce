"""Encode motion clips into per-frame feature matrices and decode them back.

Six representations are supported: raw joint positions, and five
root-position + joint-rotation layouts (6D, quaternion, axis-angle, Euler,
full matrix). A frame's feature vector stacks every joint's rotation block
in skeleton order and ends with the root position zero-padded to the block
width; the positions representation is simply world joint positions with
the clip's first-frame root shifted to the origin, flattened joint-major.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import rotations, skeleton as sk
from .errors import DegenerateFeatureError
from .validation import check_array


class ReprKind(str, Enum):
    POSITIONS = "positions"
    ROT6D = "rot6d"
    QUATERNION = "quat"
    AXIS_ANGLE = "axisangle"
    EULER = "euler"
    ROTMAT = "rotmat"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown representation kind {value!r}; expected one of: {valid}")


_BLOCK_WIDTH = {
    ReprKind.ROT6D: 6,
    ReprKind.QUATERNION: 4,
    ReprKind.AXIS_ANGLE: 3,
    ReprKind.EULER: 3,
    ReprKind.ROTMAT: 9,
}


def feature_dim(kind, joint_count):
    """Feature dimension D for a representation and joint count."""
    kind = ReprKind.parse(kind)
    if joint_count < 1:
        raise ValueError("joint_count must be >= 1")
    if kind is ReprKind.POSITIONS:
        return joint_count * 3
    return (joint_count + 1) * _BLOCK_WIDTH[kind]


@dataclass
class MotionClip:
    """Canonical clip storage: root trajectory + per-joint unit quaternions."""

    root_positions: np.ndarray   # (N, 3)
    joint_rotations: np.ndarray  # (N, J, 4), scalar-first unit quaternions
    fps: float = 20.0

    def __post_init__(self):
        self.root_positions = check_array(self.root_positions, "root_positions", ndim=2)
        self.joint_rotations = check_array(self.joint_rotations, "joint_rotations", ndim=3)
        if self.root_positions.shape[1] != 3 or self.joint_rotations.shape[2] != 4:
            raise ValueError("expected root (N, 3) and rotations (N, J, 4)")
        if self.root_positions.shape[0] != self.joint_rotations.shape[0]:
            raise ValueError("root and rotation frame counts differ")
        if self.num_frames < 1:
            raise ValueError("clip needs at least one frame")

    @property
    def num_frames(self):
        return self.root_positions.shape[0]

    @property
    def joint_count(self):
        return self.joint_rotations.shape[1]


@dataclass
class FeatureMatrix:
    """A clip under one representation: data is (D, N), features by frames."""

    kind: ReprKind
    data: np.ndarray
    joint_count: int

    def __post_init__(self):
        self.kind = ReprKind.parse(self.kind)
        self.data = check_array(self.data, "data", ndim=2)
        expected = feature_dim(self.kind, self.joint_count)
        if self.data.shape[0] != expected:
            raise ValueError(
                f"{self.kind.value} with J={self.joint_count} needs D={expected}, "
                f"got {self.data.shape[0]}"
            )

    @property
    def num_frames(self):
        return self.data.shape[1]


@dataclass
class DecodedMotion:
    """Decode output: world joint positions always, a clip when rotations exist."""

    positions: np.ndarray        # (N, J, 3)
    clip: MotionClip | None


def encode(clip, kind, skel):
    """Encode a MotionClip as a (D, N) FeatureMatrix."""
    kind = ReprKind.parse(kind)
    norms = np.linalg.norm(clip.joint_rotations, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("clip rotations must be unit quaternions")
    if clip.joint_count != skel.joint_count:
        raise ValueError("clip/skeleton joint count mismatch")
    N, J = clip.num_frames, clip.joint_count

    if kind is ReprKind.POSITIONS:
        pos = sk.forward_kinematics(skel, clip.root_positions, clip.joint_rotations)
        pos = pos - clip.root_positions[0]
        data = pos.reshape(N, J * 3).T
        return FeatureMatrix(kind=kind, data=data, joint_count=J)

    quats = clip.joint_rotations
    if kind is ReprKind.QUATERNION:
        blocks = rotations.enforce_quat_continuity(quats)
    elif kind is ReprKind.ROT6D:
        blocks = rotations.matrix_to_sixd(rotations.quat_to_matrix(quats))
    elif kind is ReprKind.AXIS_ANGLE:
        blocks = rotations.quat_to_axis_angle(quats)
    elif kind is ReprKind.EULER:
        blocks = rotations.quat_to_euler(quats)
    elif kind is ReprKind.ROTMAT:
        blocks = rotations.quat_to_matrix(quats).reshape(N, J, 9)
    else:  # pragma: no cover
        raise ValueError(f"unknown kind {kind}")

    w = _BLOCK_WIDTH[kind]
    root_block = np.zeros((N, w))
    root_block[:, :3] = clip.root_positions
    data = np.concatenate([blocks.reshape(N, J * w), root_block], axis=1).T
    return FeatureMatrix(kind=kind, data=data, joint_count=J)


def decode(fm, skel=None, fps=20.0):
    """Decode a FeatureMatrix back to joint positions (and a clip if rotational).

    Raw rotation features are projected to valid rotations first:
    quaternions renormalized, 6D Gram-Schmidt orthogonalized, matrices
    polar-projected; axis-angle and Euler features are used directly.
    The positions kind needs no skeleton (pure reshape).
    """
    kind = fm.kind
    N, J = fm.num_frames, fm.joint_count
    frames = fm.data.T  # (N, D)

    if kind is ReprKind.POSITIONS:
        if skel is not None and fm.joint_count != skel.joint_count:
            raise ValueError("feature/skeleton joint count mismatch")
        return DecodedMotion(positions=frames.reshape(N, J, 3).copy(), clip=None)

    if skel is None:
        raise ValueError("rotation-kind decode requires a skeleton")
    if fm.joint_count != skel.joint_count:
        raise ValueError("feature/skeleton joint count mismatch")

    w = _BLOCK_WIDTH[kind]
    blocks = frames[:, : J * w].reshape(N, J, w)
    root_positions = frames[:, J * w : J * w + 3].copy()

    quats = project_to_quaternions(blocks, kind)
    clip = MotionClip(root_positions=root_positions, joint_rotations=quats, fps=fps)
    positions = sk.forward_kinematics(skel, root_positions, quats)
    return DecodedMotion(positions=positions, clip=clip)


def project_to_quaternions(blocks, kind):
    """Project raw (N, J, w) rotation blocks to unit quaternions (N, J, 4)."""
    kind = ReprKind.parse(kind)
    N, J = blocks.shape[:2]
    if kind is ReprKind.QUATERNION:
        norms = np.linalg.norm(blocks, axis=-1)
        _raise_degenerate(norms < 1e-12, "quaternion block norm ~ 0")
        return blocks / norms[..., None]
    if kind is ReprKind.ROT6D:
        a1 = blocks[..., :3]
        n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
        _raise_degenerate(n1[..., 0] < 1e-12, "sixd first column ~ 0")
        b1 = a1 / n1
        a2 = blocks[..., 3:]
        u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
        _raise_degenerate(np.linalg.norm(u2, axis=-1) < 1e-12, "sixd columns parallel")
        m = rotations.sixd_to_matrix(blocks)
        return rotations.matrix_to_quat(m)
    if kind is ReprKind.AXIS_ANGLE:
        return rotations.axis_angle_to_quat(blocks)
    if kind is ReprKind.EULER:
        return rotations.euler_to_quat(blocks)
    if kind is ReprKind.ROTMAT:
        m = blocks.reshape(N, J, 3, 3)
        sv = np.linalg.svd(m, compute_uv=False)
        _raise_degenerate(sv[..., -1] < 1e-12, "matrix block rank deficient")
        return rotations.matrix_to_quat(rotations.nearest_rotation(m))
    raise ValueError(f"unknown kind {kind}")  # pragma: no cover


def _raise_degenerate(bad_mask, reason):
    if np.any(bad_mask):
        frame, joint = (int(i[0]) for i in np.nonzero(bad_mask))
        raise DegenerateFeatureError(
            f"{reason} at frame {frame}, joint {joint}", frame=frame, joint=joint
        )


@dataclass
class FeatureStats:
    """Per-dimension z-score statistics, computed on training data.

    Constant dimensions (e.g. the zero padding of the root block) get a
    floored std so normalization stays invertible.
    """

    mean: np.ndarray  # (D,)
    std: np.ndarray   # (D,)

    STD_FLOOR = 1e-8

    @classmethod
    def fit(cls, feature_matrices):
        data = np.concatenate([fm.data for fm in feature_matrices], axis=1)
        mean = data.mean(axis=1)
        std = np.maximum(data.std(axis=1), cls.STD_FLOOR)
        return cls(mean=mean, std=std)

    def normalize(self, data):
        return (data - self.mean[:, None]) / self.std[:, None]

    def denormalize(self, data):
        return data * self.std[:, None] + self.mean[:, None]
