import numpy as np
import pytest

from conftest import fd_gradient, make_clip, rel_error

from motiondiff import autodiff as ad
from motiondiff import diffusion as dif
from motiondiff import losses
from motiondiff import representation as rep
from motiondiff import skeleton as sk
from motiondiff.losses import LossConfig
from motiondiff.representation import ReprKind

ALL_KINDS = list(ReprKind)


def grad_of(loss_fn, x):
    tape = ad.Tape()
    v = tape.leaf(x)
    tape.backward(loss_fn(v))
    g = v.grad
    return g[0] if g.ndim == 3 and x.ndim == 2 else g


# -- v loss ------------------------------------------------------------------

def test_v_loss_zero_for_exact_prediction(rng):
    sch = dif.cosine_schedule(50)
    v = rng.normal(size=(3, 4))
    assert losses.v_loss(sch, v, v.copy(), 7) == 0.0


def test_v_loss_closed_form():
    # alpha_bar = 0.5 and constant error 2 everywhere -> 0.5 * 4 = 2
    sch = dif.DiffusionSchedule(beta=np.array([0.5, 0.5]))
    v_true = np.zeros((3, 5))
    v_pred = np.full((3, 5), 2.0)
    assert abs(losses.v_loss(sch, v_true, v_pred, 1) - 2.0) < 1e-12


def test_v_loss_weight_matches_schedule_table(rng):
    sch = dif.cosine_schedule(100)
    v_true = np.zeros((2, 3))
    v_pred = np.ones((2, 3))
    for t in (1, 25, 60, 100):
        expected = sch.alpha_bar[t - 1] * 1.0
        assert abs(losses.v_loss(sch, v_true, v_pred, t) - expected) < 1e-12


def test_v_loss_shape_mismatch():
    sch = dif.cosine_schedule(10)
    with pytest.raises(ValueError):
        losses.v_loss(sch, np.zeros((2, 3)), np.zeros((3, 2)), 1)


# -- position loss -----------------------------------------------------------

def test_position_loss_zero_when_equal(rng, small_skeleton):
    clip = make_clip(rng, small_skeleton)
    fm = rep.encode(clip, ReprKind.ROT6D, small_skeleton)
    assert losses.position_loss(fm.data, fm.data.copy(), ReprKind.ROT6D, small_skeleton) == 0.0


def test_position_loss_single_frame_closed_form(small_skeleton):
    # positions kind, one frame, one joint off by (1,0,0): per-frame squared
    # norm 1, mean over the single frame -> 1
    J = small_skeleton.joint_count
    x0 = np.zeros((J * 3, 1))
    xh = x0.copy()
    xh[0, 0] = 1.0
    assert losses.position_loss(x0, xh, ReprKind.POSITIONS, small_skeleton) == 1.0


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_position_loss_gradcheck(kind, small_skeleton):
    rng = np.random.default_rng(abs(hash(kind.value)) % 2**31)
    for trial in range(2):
        clip = make_clip(rng, small_skeleton, num_frames=4, euler_safe=True)
        fm = rep.encode(clip, kind, small_skeleton)
        x0 = fm.data
        pred = x0 + 0.2 * rng.normal(size=x0.shape)
        analytic = grad_of(
            lambda v: losses.position_loss(x0, v, kind, small_skeleton), pred
        )
        fd = fd_gradient(
            lambda xv: losses.position_loss(x0, xv, kind, small_skeleton), pred
        )
        assert rel_error(analytic, fd) < 1e-4


# -- velocity loss ------------------------------------------------------------

def test_velocity_loss_kills_constant_offsets(rng):
    x0 = rng.normal(size=(4, 6))
    offset = rng.normal(size=(4, 1))
    assert losses.velocity_loss(x0, x0 + offset) < 1e-24


def test_velocity_loss_hand_case():
    x0 = np.array([[0.0, 0.0, 0.0]])
    xh = np.array([[0.0, 1.0, 2.0]])
    assert losses.velocity_loss(x0, xh) == 1.0


def test_velocity_loss_needs_two_frames():
    with pytest.raises(ValueError):
        losses.velocity_loss(np.zeros((3, 1)), np.zeros((3, 1)))


def test_velocity_loss_gradcheck(rng):
    x0 = rng.normal(size=(5, 7))
    pred = x0 + 0.3 * rng.normal(size=x0.shape)
    analytic = grad_of(lambda v: losses.velocity_loss(x0, v), pred)
    fd = fd_gradient(lambda xv: losses.velocity_loss(x0, xv), pred)
    assert rel_error(analytic, fd) < 1e-4


# -- foot contact loss ---------------------------------------------------------

def test_fc_loss_zero_when_unlabeled(rng, small_skeleton):
    clip = make_clip(rng, small_skeleton, num_frames=5)
    fm = rep.encode(clip, ReprKind.QUATERNION, small_skeleton)
    labels = np.zeros((4, 4))
    assert losses.foot_contact_loss(fm.data, labels, ReprKind.QUATERNION, small_skeleton) == 0.0


def test_fc_loss_zero_for_static_feet(small_skeleton):
    J = small_skeleton.joint_count
    quats = np.tile([1.0, 0, 0, 0], (5, J, 1))
    clip = rep.MotionClip(root_positions=np.zeros((5, 3)), joint_rotations=quats, fps=20)
    fm = rep.encode(clip, ReprKind.AXIS_ANGLE, small_skeleton)
    labels = np.ones((4, 4))
    assert losses.foot_contact_loss(fm.data, labels, ReprKind.AXIS_ANGLE, small_skeleton) < 1e-20


def test_fc_loss_single_moving_foot_closed_form(small_skeleton):
    # N = 2 positions-kind prediction: one labeled foot moves by 0.1 in x
    J = small_skeleton.joint_count
    xh = np.zeros((J * 3, 2))
    foot = small_skeleton.foot_joints[0]
    xh[foot * 3 + 0, 1] = 0.1
    labels = np.zeros((1, 4))
    labels[0, 0] = 1.0
    got = losses.foot_contact_loss(xh, labels, ReprKind.POSITIONS, small_skeleton)
    assert abs(got - 0.01) < 1e-15


def test_fc_loss_label_shape(small_skeleton):
    J = small_skeleton.joint_count
    with pytest.raises(ValueError):
        losses.foot_contact_loss(np.zeros((J * 3, 3)), np.zeros((3, 4)),
                                 ReprKind.POSITIONS, small_skeleton)


def test_fc_loss_gradcheck(rng, small_skeleton):
    clip = make_clip(rng, small_skeleton, num_frames=4)
    fm = rep.encode(clip, ReprKind.ROT6D, small_skeleton)
    pred = fm.data + 0.2 * rng.normal(size=fm.data.shape)
    labels = rng.integers(0, 2, size=(3, 4)).astype(float)
    analytic = grad_of(
        lambda v: losses.foot_contact_loss(v, labels, ReprKind.ROT6D, small_skeleton), pred
    )
    fd = fd_gradient(
        lambda xv: losses.foot_contact_loss(xv, labels, ReprKind.ROT6D, small_skeleton), pred
    )
    assert rel_error(analytic, fd) < 1e-4


# -- contact extraction ---------------------------------------------------------

def test_extract_contacts_static_grounded_clip():
    skel = sk.chain_skeleton(4, bone_length=0.3)
    J = skel.joint_count
    quats = np.tile([1.0, 0, 0, 0], (6, J, 1))
    roots = np.zeros((6, 3))  # root at y=0: every joint at or below ground
    clip = rep.MotionClip(root_positions=roots, joint_rotations=quats, fps=20)
    labels = losses.extract_foot_contacts(clip, skel)
    np.testing.assert_array_equal(labels, 1.0)


def test_extract_contacts_airborne_clip():
    skel = sk.chain_skeleton(4, bone_length=0.3)
    J = skel.joint_count
    quats = np.tile([1.0, 0, 0, 0], (6, J, 1))
    roots = np.zeros((6, 3))
    roots[:, 1] = 5.0  # well above the height threshold
    clip = rep.MotionClip(root_positions=roots, joint_rotations=quats, fps=20)
    labels = losses.extract_foot_contacts(clip, skel)
    np.testing.assert_array_equal(labels, 0.0)


def test_extract_contacts_matches_constructed_windows():
    """Build a trajectory from known stance windows, then recover them."""
    skel = sk.chain_skeleton(4, bone_length=0.1)
    J = skel.joint_count
    N = 20
    stance = np.zeros(N, dtype=bool)
    stance[3:8] = True
    stance[13:17] = True
    roots = np.zeros((N, 3))
    x = 0.0
    for i in range(1, N):
        x += 0.0 if stance[i - 1] else 0.05  # move only outside stance
        roots[i, 0] = x
    quats = np.tile([1.0, 0, 0, 0], (N, J, 1))
    clip = rep.MotionClip(root_positions=roots, joint_rotations=quats, fps=20)
    labels = losses.extract_foot_contacts(clip, skel, speed_threshold=0.01,
                                          height_threshold=0.5)
    np.testing.assert_array_equal(labels, np.tile(stance[:-1, None], (1, 4)).astype(float))


# -- total loss ---------------------------------------------------------------

def make_total_inputs(rng, skel, kind):
    clip = make_clip(rng, skel, num_frames=5, euler_safe=True)
    fm = rep.encode(clip, kind, skel)
    sch = dif.cosine_schedule(30)
    t = 12
    eps = rng.normal(size=fm.data.shape)
    x_t = dif.q_sample(sch, fm.data, t, eps)
    v_true = dif.compute_v(sch, fm.data, eps, t)
    v_pred = v_true + 0.1 * rng.normal(size=v_true.shape)
    x0_hat = dif.v_to_x0(sch, x_t, v_pred, t)
    labels = rng.integers(0, 2, size=(4, 4)).astype(float)
    return sch, v_true, v_pred, t, fm.data, x0_hat, labels


def test_total_loss_reduces_to_v_loss(rng, small_skeleton):
    sch, v_true, v_pred, t, x0, x0_hat, labels = make_total_inputs(
        rng, small_skeleton, ReprKind.ROT6D
    )
    expected = losses.v_loss(sch, v_true, v_pred, t)
    for cfg in (LossConfig(lambda_pos=0, lambda_vel=0, lambda_fc=0),
                LossConfig(geometric_enabled=False)):
        total, breakdown = losses.total_loss(
            sch, v_true, v_pred, t, x0, x0_hat, ReprKind.ROT6D, small_skeleton,
            cfg, labels if cfg.geometric_enabled else None,
        )
        assert abs(total - expected) < 1e-15


def test_total_loss_breakdown_additivity(rng, small_skeleton):
    sch, v_true, v_pred, t, x0, x0_hat, labels = make_total_inputs(
        rng, small_skeleton, ReprKind.QUATERNION
    )
    cfg = LossConfig(lambda_pos=0.7, lambda_vel=1.3, lambda_fc=0.2)
    total, bd = losses.total_loss(
        sch, v_true, v_pred, t, x0, x0_hat, ReprKind.QUATERNION, small_skeleton,
        cfg, labels,
    )
    recombined = bd["v"] + 0.7 * bd["pos"] + 1.3 * bd["vel"] + 0.2 * bd["fc"]
    assert abs(total - recombined) < 1e-12
    assert all(v >= 0 for v in bd.values())


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(lambda_pos=-1.0)
    with pytest.raises(ValueError):
        LossConfig(lambda_vel=np.inf)


def test_polar_fallback_keeps_training_total(rng, small_skeleton):
    """Improper matrix features (det < 0) must not produce NaNs."""
    clip = make_clip(rng, small_skeleton, num_frames=3)
    fm = rep.encode(clip, ReprKind.ROTMAT, small_skeleton)
    pred = fm.data.copy()
    # flip one block's first column: determinant goes negative
    pred[0:9, 1] = fm.data[0:9, 1] * np.array([-1, 1, 1, -1, 1, 1, -1, 1, 1])
    value = losses.position_loss(fm.data, pred, ReprKind.ROTMAT, small_skeleton)
    assert np.isfinite(value)
    g = grad_of(
        lambda v: losses.position_loss(fm.data, v, ReprKind.ROTMAT, small_skeleton), pred
    )
    assert np.all(np.isfinite(g))
