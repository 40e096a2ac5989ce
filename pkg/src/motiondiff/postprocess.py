"""Gaussian temporal smoothing of feature matrices.

A normalized, truncated Gaussian kernel is convolved along the time axis of
each feature row, with reflected boundaries (edge sample included, so
length-1 signals are valid). Rotation-kind features should be smoothed
before decoding; decode re-projects them to valid rotations.
"""

from dataclasses import dataclass

import numpy as np

from .representation import FeatureMatrix


@dataclass
class SmootherConfig:
    sigma: float = 1.5      # in frames
    truncate: float = 4.0   # kernel radius in multiples of sigma

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.truncate <= 0:
            raise ValueError("truncate must be > 0")

    @property
    def radius(self):
        return max(1, int(self.truncate * self.sigma + 0.5))


def gaussian_kernel(cfg):
    """Normalized kernel of length 2 * radius + 1; weights sum to 1."""
    r = cfg.radius
    x = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-0.5 * (x / cfg.sigma) ** 2)
    return k / k.sum()


def smooth_array(data, cfg):
    """Convolve rows of (D, N) along the last axis with reflect padding."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError("expected a (D, N) array")
    kernel = gaussian_kernel(cfg)
    r = cfg.radius
    padded = np.pad(data, ((0, 0), (r, r)), mode="symmetric")
    n = data.shape[1]
    out = np.zeros_like(data)
    for offset, weight in enumerate(kernel):
        out += weight * padded[:, offset : offset + n]
    return out


def gaussian_smooth(fm, cfg=None):
    """Smooth a FeatureMatrix along time; shape and kind preserved."""
    if cfg is None:
        cfg = SmootherConfig()
    return FeatureMatrix(
        kind=fm.kind, data=smooth_array(fm.data, cfg), joint_count=fm.joint_count
    )
