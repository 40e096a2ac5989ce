"""File formats, clip windowing/resampling, and synthetic dataset generation.

All binary formats share the same envelope: a 16-byte magic, a uint32
format version, then format-specific fields; every number is little-endian
and array payloads are raw 64-bit floats (parameters keep their own dtype).
Round trips are bit-exact. Version mismatches raise FormatVersionError.
"""

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import rotations
from .denoiser import AdamState, DenoiserConfig
from .errors import FormatError, FormatVersionError
from .losses import LossConfig
from .representation import FeatureMatrix, FeatureStats, MotionClip, ReprKind
from .skeleton import Skeleton, chain_skeleton

CLIP_MAGIC = b"MOTIONDIFF-CLIP\x00"
FEATURE_MAGIC = b"MOTIONDIFF-FEAT\x00"
CHECKPOINT_MAGIC = b"MOTIONDIFF-CKPT\x00"
CLIP_VERSION = 1
FEATURE_VERSION = 1
CHECKPOINT_VERSION = 1
ROTATION_TAG = b"quat-wxyz".ljust(16, b"\x00")

_DTYPE_TAGS = {1: "<f8", 2: "<f4", 3: "<i8", 4: "<i4"}
_TAG_FOR_DTYPE = {np.dtype(v): k for k, v in _DTYPE_TAGS.items()}


# ---------------------------------------------------------------------------
# clip files
# ---------------------------------------------------------------------------

def write_clip(path, clip, skel):
    """Write a MotionClip and its skeleton as one self-contained file."""
    buf = io.BytesIO()
    buf.write(CLIP_MAGIC)
    buf.write(struct.pack("<I", CLIP_VERSION))
    buf.write(struct.pack("<d", float(clip.fps)))
    J, N = clip.joint_count, clip.num_frames
    if J != skel.joint_count:
        raise ValueError("clip/skeleton joint count mismatch")
    buf.write(struct.pack("<II", J, N))
    buf.write(ROTATION_TAG)
    buf.write(np.ascontiguousarray(skel.parents, dtype="<i4").tobytes())
    buf.write(np.ascontiguousarray(skel.offsets, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(skel.foot_joints, dtype="<u4").tobytes())
    buf.write(np.ascontiguousarray(clip.root_positions, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(clip.joint_rotations, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_clip(path):
    """Read a clip file; returns (MotionClip, Skeleton)."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, CLIP_MAGIC, CLIP_VERSION, "clip")
    fps = r.unpack("<d")[0]
    J, N = r.unpack("<II")
    tag = r.take(16)
    if tag != ROTATION_TAG:
        raise FormatError(f"unknown rotation convention tag {tag!r}")
    parents = r.array("<i4", (J,))
    offsets = r.array("<f8", (J, 3))
    feet = r.array("<u4", (4,)).astype(int)
    roots = r.array("<f8", (N, 3))
    quats = r.array("<f8", (N, J, 4))
    r.expect_end()
    skel = Skeleton(parents=parents.astype(int), offsets=offsets, foot_joints=feet)
    return MotionClip(root_positions=roots, joint_rotations=quats, fps=fps), skel


# ---------------------------------------------------------------------------
# feature-matrix files
# ---------------------------------------------------------------------------

def write_features(path, fm, fps=20.0):
    buf = io.BytesIO()
    buf.write(FEATURE_MAGIC)
    buf.write(struct.pack("<I", FEATURE_VERSION))
    buf.write(fm.kind.value.encode().ljust(16, b"\x00"))
    buf.write(struct.pack("<d", float(fps)))
    D, N = fm.data.shape
    buf.write(struct.pack("<III", fm.joint_count, N, D))
    buf.write(np.ascontiguousarray(fm.data, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_features(path):
    """Read a feature file; returns (FeatureMatrix, fps)."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, FEATURE_MAGIC, FEATURE_VERSION, "feature")
    kind = ReprKind.parse(r.take(16).rstrip(b"\x00").decode())
    fps = r.unpack("<d")[0]
    J, N, D = r.unpack("<III")
    payload = r.array("<f8", (D, N))
    r.expect_end()
    return FeatureMatrix(kind=kind, data=payload, joint_count=J), fps


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Everything needed to resume training or sample, self-contained."""

    config: DenoiserConfig
    params: dict
    kind: ReprKind
    betas: np.ndarray
    stats: FeatureStats
    skel: Skeleton
    loss_config: LossConfig = field(default_factory=LossConfig)
    step: int = 0
    seed: int = 0
    lr: float = 1e-4
    fps: float = 20.0
    rng_state: dict | None = None
    adam: AdamState | None = None


def save_checkpoint(path, ckpt):
    meta = {
        "denoiser": ckpt.config.to_dict(),
        "kind": ckpt.kind.value,
        "loss": {
            "lambda_pos": ckpt.loss_config.lambda_pos,
            "lambda_vel": ckpt.loss_config.lambda_vel,
            "lambda_fc": ckpt.loss_config.lambda_fc,
            "geometric_enabled": ckpt.loss_config.geometric_enabled,
        },
        "step": ckpt.step,
        "seed": ckpt.seed,
        "lr": ckpt.lr,
        "fps": ckpt.fps,
        "rng_state": ckpt.rng_state,
        "adam_step": ckpt.adam.step if ckpt.adam is not None else None,
        "skeleton_names": list(ckpt.skel.names),
    }
    sections = [
        (b"meta", json.dumps(meta, sort_keys=True).encode()),
        (b"params", _pack_arrays(ckpt.params)),
        (b"betas", _pack_arrays({"betas": ckpt.betas})),
        (b"norm", _pack_arrays({"mean": ckpt.stats.mean, "std": ckpt.stats.std})),
        (
            b"skeleton",
            _pack_arrays(
                {
                    "parents": np.asarray(ckpt.skel.parents, dtype=np.int64),
                    "offsets": ckpt.skel.offsets,
                    "foot_joints": np.asarray(ckpt.skel.foot_joints, dtype=np.int64),
                }
            ),
        ),
    ]
    if ckpt.adam is not None:
        sections.append((b"adam_m", _pack_arrays(ckpt.adam.m)))
        sections.append((b"adam_v", _pack_arrays(ckpt.adam.v)))

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(sections)))
    header_size = buf.tell() + len(sections) * (16 + 16)
    offset = header_size
    for name, payload in sections:
        buf.write(name.ljust(16, b"\x00"))
        buf.write(struct.pack("<QQ", offset, len(payload)))
        offset += len(payload)
    for _, payload in sections:
        buf.write(payload)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")
    (count,) = r.unpack("<I")
    table = {}
    for _ in range(count):
        name = r.take(16).rstrip(b"\x00").decode()
        off, length = r.unpack("<QQ")
        if off + length > len(data):
            raise FormatError("checkpoint section past end of file")
        table[name] = (off, length)

    def section(name):
        off, length = table[name]
        return data[off : off + length]

    meta = json.loads(section("meta").decode())
    params = _unpack_arrays(section("params"))
    betas = _unpack_arrays(section("betas"))["betas"]
    norm = _unpack_arrays(section("norm"))
    skel_arrays = _unpack_arrays(section("skeleton"))
    skel = Skeleton(
        parents=skel_arrays["parents"].astype(int),
        offsets=skel_arrays["offsets"],
        foot_joints=skel_arrays["foot_joints"].astype(int),
        names=tuple(meta.get("skeleton_names", ())),
    )
    adam = None
    if "adam_m" in table:
        adam = AdamState(
            step=int(meta["adam_step"]),
            m=_unpack_arrays(section("adam_m")),
            v=_unpack_arrays(section("adam_v")),
        )
    rng_state = meta.get("rng_state")
    if rng_state is not None:
        rng_state = _decode_rng_state(rng_state)
    return Checkpoint(
        config=DenoiserConfig(**meta["denoiser"]),
        params=params,
        kind=ReprKind.parse(meta["kind"]),
        betas=betas,
        stats=FeatureStats(mean=norm["mean"], std=norm["std"]),
        skel=skel,
        loss_config=LossConfig(**meta["loss"]),
        step=int(meta["step"]),
        seed=int(meta["seed"]),
        lr=float(meta["lr"]),
        fps=float(meta["fps"]),
        rng_state=rng_state,
        adam=adam,
    )


def encode_rng_state(rng):
    """JSON-safe copy of a numpy Generator's bit-generator state."""
    return json.loads(json.dumps(rng.bit_generator.state, default=int))


def restore_rng(state):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = _decode_rng_state(state)
    return rng


def _decode_rng_state(state):
    out = dict(state)
    if isinstance(out.get("state"), dict):
        out["state"] = {
            k: int(v) if isinstance(v, str) else v for k, v in out["state"].items()
        }
    return out


# ---------------------------------------------------------------------------
# skeleton definition files (editable JSON)
# ---------------------------------------------------------------------------

def save_skeleton(path, skel):
    doc = {
        "parents": np.asarray(skel.parents).tolist(),
        "offsets": np.asarray(skel.offsets).tolist(),
        "foot_joints": np.asarray(skel.foot_joints).tolist(),
        "names": list(skel.names),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)


def load_skeleton(path):
    with open(path) as f:
        doc = json.load(f)
    return Skeleton(
        parents=np.asarray(doc["parents"], dtype=int),
        offsets=np.asarray(doc["offsets"], dtype=float),
        foot_joints=np.asarray(doc["foot_joints"], dtype=int),
        names=tuple(doc.get("names", ())),
    )


# ---------------------------------------------------------------------------
# windowing / resampling
# ---------------------------------------------------------------------------

def window(clip, length, stride):
    """Fixed-length windows starting at 0, stride, 2*stride, ...; a trailing
    partial window is dropped. Longer-than-clip lengths give an empty list."""
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be >= 1")
    out = []
    for start in range(0, clip.num_frames - length + 1, stride):
        out.append(
            MotionClip(
                root_positions=clip.root_positions[start : start + length].copy(),
                joint_rotations=clip.joint_rotations[start : start + length].copy(),
                fps=clip.fps,
            )
        )
    return out


def downsample(clip, factor):
    """Keep frames 0, factor, 2*factor, ...; fps divides by factor."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    return MotionClip(
        root_positions=clip.root_positions[::factor].copy(),
        joint_rotations=clip.joint_rotations[::factor].copy(),
        fps=clip.fps / factor,
    )


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SyntheticMotionSpec:
    """Deterministic synthetic clip generator settings.

    ``amplitude`` scales all motion (joint swing, root travel, bob), so 0
    yields static rest-pose clips. ``frequency`` is radians per frame.
    """

    generator: str = "gait"
    joint_count: int = 4
    num_frames: int = 32
    fps: float = 20.0
    num_clips: int = 16
    seed: int = 0
    amplitude_range: tuple = (0.3, 0.6)
    frequency_range: tuple = (0.25, 0.4)
    speed: float = 0.01          # forward units per frame per unit amplitude
    bone_length: float = 0.3
    ground_clearance: float = 0.02

    def __post_init__(self):
        if self.generator not in ("gait", "figure8"):
            raise ValueError("generator must be 'gait' or 'figure8'")
        if self.num_frames < 2 or self.num_clips < 1 or self.joint_count < 4:
            raise ValueError("need num_frames >= 2, num_clips >= 1, joint_count >= 4")


def generate_synthetic(spec):
    """Generate clips per the spec; returns (clips, skeleton).

    The gait generator swings a downward chain so the tip periodically
    pauses near the ground (extractable foot contacts); figure8 drives the
    root along a lemniscate with gentle joint sway.
    """
    rng = np.random.default_rng(spec.seed)
    skel = chain_skeleton(spec.joint_count, bone_length=spec.bone_length)
    total_len = spec.bone_length * (spec.joint_count - 1)
    frames = np.arange(spec.num_frames, dtype=float)
    clips = []
    for _ in range(spec.num_clips):
        amp = rng.uniform(*spec.amplitude_range)
        omega = rng.uniform(*spec.frequency_range)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        weights = rng.uniform(0.5, 1.0, size=spec.joint_count) / spec.joint_count
        if spec.generator == "gait":
            clips.append(
                _gait_clip(spec, total_len, frames, amp, omega, phase, weights)
            )
        else:
            clips.append(
                _figure8_clip(spec, total_len, frames, amp, omega, phase, weights, rng)
            )
    return clips, skel


def _gait_clip(spec, total_len, frames, amp, omega, phase, weights):
    N, J = spec.num_frames, spec.joint_count
    s = np.sin(omega * frames + phase)
    # swing in [-2*amp*w, 0]; zero angular velocity exactly when the chain
    # hangs straight down, which puts the tip low and slow: a contact
    angles = -amp * weights[None, :] * (1.0 - s[:, None])
    axis = np.zeros((N, J, 3))
    axis[:, :, 2] = angles
    quats = rotations.axis_angle_to_quat(axis)
    roots = np.zeros((N, 3))
    roots[:, 0] = spec.speed * amp * frames
    roots[:, 1] = total_len + spec.ground_clearance + 0.02 * amp * (1.0 - s)
    return MotionClip(root_positions=roots, joint_rotations=quats, fps=spec.fps)


def _figure8_clip(spec, total_len, frames, amp, omega, phase, weights, rng):
    N, J = spec.num_frames, spec.joint_count
    theta = 2.0 * np.pi * frames / max(N - 1, 1) + phase
    roots = np.zeros((N, 3))
    scale = 0.5 * amp
    roots[:, 0] = scale * np.sin(theta)
    roots[:, 2] = scale * np.sin(theta) * np.cos(theta)
    roots[:, 1] = total_len + spec.ground_clearance
    sway_axis = rng.integers(0, 3, size=J)
    angles = amp * weights[None, :] * np.sin(omega * frames[:, None] + phase)
    axis = np.zeros((N, J, 3))
    for j in range(J):
        axis[:, j, sway_axis[j]] = angles[:, j]
    quats = rotations.axis_angle_to_quat(axis)
    return MotionClip(root_positions=roots, joint_rotations=quats, fps=spec.fps)


# ---------------------------------------------------------------------------
# binary plumbing
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, data, magic, version, label):
        self.data = data
        self.pos = 0
        if data[:16] != magic:
            raise FormatError(f"not a {label} file (bad magic)")
        self.pos = 16
        (got,) = struct.unpack_from("<I", data, self.pos)
        self.pos += 4
        if got != version:
            raise FormatVersionError(
                f"{label} file is version {got}, this build reads {version}"
            )

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def array(self, dtype, shape):
        count = int(np.prod(shape))
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    def expect_end(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes")


def _pack_arrays(arrays):
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _TAG_FOR_DTYPE:
            arr = arr.astype(np.float64)
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", _TAG_FOR_DTYPE[arr.dtype], arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.tobytes())
    return buf.getvalue()


def _unpack_arrays(payload):
    out = {}
    pos = 0
    (count,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", payload, pos)
        pos += 2
        name = payload[pos : pos + name_len].decode()
        pos += name_len
        tag, ndim = struct.unpack_from("<BB", payload, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", payload, pos) if ndim else ()
        pos += 4 * ndim
        dtype = np.dtype(_DTYPE_TAGS[tag])
        nbytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
        arr = np.frombuffer(payload[pos : pos + nbytes], dtype=dtype).reshape(shape).copy()
        pos += nbytes
        out[name] = arr
    return out
