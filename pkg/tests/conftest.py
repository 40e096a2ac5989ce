import numpy as np
import pytest

from motiondiff import rotations as rot
from motiondiff.representation import MotionClip
from motiondiff.skeleton import chain_skeleton


def fd_gradient(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        up = x.copy()
        up[idx] += h
        down = x.copy()
        down[idx] -= h
        grad[idx] = (f(up) - f(down)) / (2.0 * h)
        it.iternext()
    return grad


def rel_error(analytic, reference):
    analytic = np.asarray(analytic)
    reference = np.asarray(reference)
    scale = max(1.0, np.abs(analytic).max(), np.abs(reference).max())
    return np.abs(analytic - reference).max() / scale


def make_clip(rng, skel, num_frames=6, euler_safe=False, root_scale=0.5):
    """Random clip; euler_safe keeps every joint away from the pitch singularity."""
    J = skel.joint_count
    if euler_safe:
        angles = rng.uniform(-1.2, 1.2, size=(num_frames, J, 3))
        quats = rot.euler_to_quat(angles)
    else:
        quats = rot.random_rotations(num_frames * J, rng).reshape(num_frames, J, 4)
    roots = rng.normal(size=(num_frames, 3)) * root_scale
    return MotionClip(root_positions=roots, joint_rotations=quats, fps=20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_skeleton():
    return chain_skeleton(4)
