import numpy as np
import pytest

from conftest import make_clip

from motiondiff import representation as rep
from motiondiff import skeleton as sk
from motiondiff.errors import DegenerateFeatureError
from motiondiff.representation import FeatureMatrix, FeatureStats, ReprKind

EXPECTED_WIDTH = {
    ReprKind.POSITIONS: lambda j: j * 3,
    ReprKind.ROT6D: lambda j: (j + 1) * 6,
    ReprKind.QUATERNION: lambda j: (j + 1) * 4,
    ReprKind.AXIS_ANGLE: lambda j: (j + 1) * 3,
    ReprKind.EULER: lambda j: (j + 1) * 3,
    ReprKind.ROTMAT: lambda j: (j + 1) * 9,
}


@pytest.mark.parametrize("kind", list(ReprKind))
@pytest.mark.parametrize("joints", range(2, 33))
def test_feature_dimensions(kind, joints):
    assert rep.feature_dim(kind, joints) == EXPECTED_WIDTH[kind](joints)


def test_dimensions_for_24_joints():
    dims = {k: rep.feature_dim(k, 24) for k in ReprKind}
    assert dims[ReprKind.POSITIONS] == 72
    assert dims[ReprKind.ROTMAT] == 225
    assert dims[ReprKind.ROT6D] == 150
    assert dims[ReprKind.QUATERNION] == 100
    assert dims[ReprKind.AXIS_ANGLE] == 75
    assert dims[ReprKind.EULER] == 75


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        rep.feature_dim("sixd-ish", 4)


def test_root_block_is_zero_padded(rng, small_skeleton):
    clip = make_clip(rng, small_skeleton)
    fm = rep.encode(clip, ReprKind.ROT6D, small_skeleton)
    J = small_skeleton.joint_count
    root_block = fm.data[J * 6 :, :]
    np.testing.assert_array_equal(root_block[:3].T, clip.root_positions)
    np.testing.assert_array_equal(root_block[3:], 0.0)


@pytest.mark.parametrize("kind", list(ReprKind))
def test_encode_decode_round_trip_50_clips(kind, small_skeleton):
    rng = np.random.default_rng(hash(kind.value) % 2**31)
    skel = small_skeleton
    worst = 0.0
    for _ in range(50):
        clip = make_clip(rng, skel, num_frames=5, euler_safe=True)
        fm = rep.encode(clip, kind, skel)
        decoded = rep.decode(fm, skel)
        reference = sk.forward_kinematics(skel, clip.root_positions, clip.joint_rotations)
        if kind is ReprKind.POSITIONS:
            reference = reference - clip.root_positions[0]
        worst = max(worst, np.abs(decoded.positions - reference).max())
    assert worst < 1e-6


def test_quaternion_encoding_is_continuous(rng, small_skeleton):
    clip = make_clip(rng, small_skeleton, num_frames=30)
    # inject hemisphere flips
    flipped = clip.joint_rotations.copy()
    flipped[::3] *= -1.0
    clip = rep.MotionClip(root_positions=clip.root_positions,
                          joint_rotations=flipped, fps=clip.fps)
    fm = rep.encode(clip, ReprKind.QUATERNION, small_skeleton)
    J = small_skeleton.joint_count
    quats = fm.data[: J * 4].T.reshape(clip.num_frames, J, 4)
    dots = np.sum(quats[:-1] * quats[1:], axis=-1)
    assert np.all(dots >= 0)


def test_all_zero_axis_angle_decodes_to_rest_pose(small_skeleton):
    J = small_skeleton.joint_count
    D = rep.feature_dim(ReprKind.AXIS_ANGLE, J)
    fm = FeatureMatrix(kind=ReprKind.AXIS_ANGLE, data=np.zeros((D, 4)), joint_count=J)
    decoded = rep.decode(fm, small_skeleton)
    np.testing.assert_array_equal(
        decoded.clip.joint_rotations, np.tile([1.0, 0, 0, 0], (4, J, 1))
    )
    rest = sk.forward_kinematics(
        small_skeleton, np.zeros(3), np.tile([1.0, 0, 0, 0], (J, 1))
    )
    np.testing.assert_allclose(decoded.positions, np.tile(rest, (4, 1, 1)), atol=1e-15)


def test_zero_positions_decode(small_skeleton):
    J = small_skeleton.joint_count
    fm = FeatureMatrix(kind=ReprKind.POSITIONS, data=np.zeros((J * 3, 3)), joint_count=J)
    decoded = rep.decode(fm, small_skeleton)
    np.testing.assert_array_equal(decoded.positions, np.zeros((3, J, 3)))
    assert decoded.clip is None


def test_positions_decode_without_skeleton(small_skeleton):
    J = small_skeleton.joint_count
    fm = FeatureMatrix(kind=ReprKind.POSITIONS, data=np.zeros((J * 3, 3)), joint_count=J)
    assert rep.decode(fm).positions.shape == (3, J, 3)


def test_decode_projects_noisy_features_to_rotations(rng, small_skeleton):
    skel = small_skeleton
    J = skel.joint_count
    for kind in (ReprKind.QUATERNION, ReprKind.ROT6D, ReprKind.ROTMAT):
        clip = make_clip(rng, skel)
        fm = rep.encode(clip, kind, skel)
        noisy = FeatureMatrix(
            kind=kind,
            data=fm.data + 0.1 * rng.normal(size=fm.data.shape),
            joint_count=J,
        )
        decoded = rep.decode(noisy, skel)
        from motiondiff.rotations import quat_to_matrix

        mats = quat_to_matrix(decoded.clip.joint_rotations)
        gram = np.swapaxes(mats, -1, -2) @ mats
        assert np.abs(gram - np.eye(3)).max() < 1e-9


def test_degenerate_quaternion_block_reports_location(small_skeleton):
    J = small_skeleton.joint_count
    D = rep.feature_dim(ReprKind.QUATERNION, J)
    data = np.ones((D, 5))
    data[2 * 4 : 3 * 4, 3] = 0.0  # joint 2, frame 3
    fm = FeatureMatrix(kind=ReprKind.QUATERNION, data=data, joint_count=J)
    with pytest.raises(DegenerateFeatureError) as exc:
        rep.decode(fm, small_skeleton)
    assert exc.value.frame == 3
    assert exc.value.joint == 2


def test_feature_matrix_validates_dimension(small_skeleton):
    with pytest.raises(ValueError):
        FeatureMatrix(kind=ReprKind.ROT6D, data=np.zeros((7, 3)), joint_count=4)


def test_encode_requires_unit_quaternions(rng, small_skeleton):
    clip = make_clip(rng, small_skeleton)
    bad = rep.MotionClip(
        root_positions=clip.root_positions,
        joint_rotations=clip.joint_rotations * 1.1,
        fps=20.0,
    )
    with pytest.raises(ValueError):
        rep.encode(bad, ReprKind.ROT6D, small_skeleton)


def test_encode_rejects_non_finite(rng, small_skeleton):
    clip = make_clip(rng, small_skeleton)
    bad_roots = clip.root_positions.copy()
    bad_roots[0, 0] = np.nan
    with pytest.raises(ValueError):
        rep.MotionClip(root_positions=bad_roots,
                       joint_rotations=clip.joint_rotations, fps=20.0)


def test_positions_anchor_first_frame_root(rng, small_skeleton):
    clip = make_clip(rng, small_skeleton, num_frames=4, root_scale=2.0)
    fm = rep.encode(clip, ReprKind.POSITIONS, small_skeleton)
    first_frame_root = fm.data[:3, 0]
    np.testing.assert_allclose(first_frame_root, np.zeros(3), atol=1e-12)
    # later frames keep the global trajectory relative to the start
    decoded = rep.decode(fm, small_skeleton)
    expected_root = clip.root_positions - clip.root_positions[0]
    np.testing.assert_allclose(decoded.positions[:, 0, :], expected_root, atol=1e-12)


def test_feature_stats_round_trip(rng, small_skeleton):
    clips = [make_clip(rng, small_skeleton) for _ in range(3)]
    fms = [rep.encode(c, ReprKind.ROT6D, small_skeleton) for c in clips]
    stats = FeatureStats.fit(fms)
    normalized = stats.normalize(fms[0].data)
    np.testing.assert_allclose(stats.denormalize(normalized), fms[0].data, atol=1e-9)
    # zero-padding rows stay exactly zero through normalization
    J = small_skeleton.joint_count
    pad_rows = normalized[J * 6 + 3 :]
    np.testing.assert_array_equal(pad_rows, 0.0)
