"""Desk-scale motion diffusion toolkit.

Motion representations, a v-prediction DDPM with a transformer denoiser and
hand-written reverse-mode gradients, geometric losses through forward
kinematics, generative-metric evaluation, and temporal smoothing.
"""

from .diffusion import (
    DiffusionSchedule,
    compute_v,
    cosine_schedule,
    p_sample_step,
    q_sample,
    sample,
    v_to_eps,
    v_to_x0,
)
from .losses import LossConfig, extract_foot_contacts, foot_contact_loss, position_loss, total_loss, v_loss, velocity_loss
from .metrics import MetricReport, diversity, evaluate, fid, flatten_extractor, kid, precision_recall, smoothness
from .model import GaussianSmoother, MotionDiffusionModel, MotionFeatureEncoder
from .postprocess import SmootherConfig, gaussian_smooth
from .representation import (
    DecodedMotion,
    FeatureMatrix,
    FeatureStats,
    MotionClip,
    ReprKind,
    decode,
    encode,
    feature_dim,
)
from .skeleton import Pose, Skeleton, chain_skeleton, default_skeleton, forward_kinematics

__all__ = [
    "DiffusionSchedule",
    "compute_v",
    "cosine_schedule",
    "p_sample_step",
    "q_sample",
    "sample",
    "v_to_eps",
    "v_to_x0",
    "LossConfig",
    "extract_foot_contacts",
    "foot_contact_loss",
    "position_loss",
    "total_loss",
    "v_loss",
    "velocity_loss",
    "MetricReport",
    "diversity",
    "evaluate",
    "fid",
    "flatten_extractor",
    "kid",
    "precision_recall",
    "smoothness",
    "GaussianSmoother",
    "MotionDiffusionModel",
    "MotionFeatureEncoder",
    "SmootherConfig",
    "gaussian_smooth",
    "DecodedMotion",
    "FeatureMatrix",
    "FeatureStats",
    "MotionClip",
    "ReprKind",
    "decode",
    "encode",
    "feature_dim",
    "Pose",
    "Skeleton",
    "chain_skeleton",
    "default_skeleton",
    "forward_kinematics",
]
