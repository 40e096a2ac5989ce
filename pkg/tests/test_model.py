import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from motiondiff import dataio as dio
from motiondiff import postprocess as pp
from motiondiff import skeleton as sk
from motiondiff.model import GaussianSmoother, MotionDiffusionModel, MotionFeatureEncoder
from motiondiff.representation import ReprKind


@pytest.fixture(scope="module")
def gait():
    spec = dio.SyntheticMotionSpec(num_clips=24, num_frames=16, seed=3)
    return dio.generate_synthetic(spec)


@pytest.fixture(scope="module")
def trained(gait):
    clips, skel = gait
    model = MotionDiffusionModel(kind="positions", num_steps=20, train_steps=40,
                                 batch_size=8, seed=5, lr=3e-4)
    return model.fit(clips, skeleton=skel)


def test_encoder_roundtrip(gait):
    clips, skel = gait
    enc = MotionFeatureEncoder(kind="rot6d").fit(clips, skeleton=skel)
    fms = enc.transform(clips)
    decoded = enc.inverse_transform(fms)
    reference = sk.forward_kinematics(
        skel, clips[0].root_positions, clips[0].joint_rotations
    )
    np.testing.assert_allclose(decoded[0].positions, reference, atol=1e-9)


def test_encoder_not_fitted(gait):
    clips, _ = gait
    with pytest.raises(NotFittedError):
        MotionFeatureEncoder().transform(clips)


def test_encoder_requires_skeleton(gait):
    clips, _ = gait
    with pytest.raises(ValueError):
        MotionFeatureEncoder().fit(clips)


def test_estimator_params_clone():
    from sklearn.base import clone

    model = MotionDiffusionModel(kind="quat", latent_dim=32, lambda_fc=0.5)
    params = model.get_params()
    assert params["kind"] == "quat"
    assert params["latent_dim"] == 32
    dup = clone(model)
    assert dup.get_params() == params
    dup.set_params(latent_dim=16)
    assert dup.latent_dim == 16


def test_fit_records_history_and_losses(trained):
    assert trained.step_ == 40
    assert len(trained.history_) == 40
    first = trained.history_[0]
    assert {"step", "total", "v", "pos", "vel", "fc", "ms"} <= set(first)


def test_sampling_contracts(trained):
    fms = trained.sample(3, seed=7)
    assert len(fms) == 3
    assert all(f.data.shape == (12, 16) for f in fms)
    again = trained.sample(3, seed=7)
    for a, b in zip(fms, again):
        np.testing.assert_array_equal(a.data, b.data)
    other = trained.sample(3, seed=8)
    assert not np.array_equal(fms[0].data, other[0].data)


def test_sample_positions_shape(trained):
    positions = trained.sample_positions(2, seed=1)
    assert positions[0].shape == (16, 4, 3)


def test_smoothed_sampling_equals_offline_smoothing(trained):
    raw = trained.sample(2, seed=3, smooth=False)
    smoothed = trained.sample(2, seed=3, smooth=True, sigma=1.5, truncate=4.0)
    cfg = pp.SmootherConfig(sigma=1.5, truncate=4.0)
    for r, s in zip(raw, smoothed):
        np.testing.assert_allclose(pp.gaussian_smooth(r, cfg).data, s.data, atol=1e-12)


def test_not_fitted_errors():
    model = MotionDiffusionModel()
    with pytest.raises(NotFittedError):
        model.sample(1)
    with pytest.raises(NotFittedError):
        model.save("/tmp/nope.ckpt")


def test_save_load_sampling_identical(tmp_path, trained):
    path = tmp_path / "model.ckpt"
    trained.save(path)
    loaded = MotionDiffusionModel.load(path)
    a = trained.sample(2, seed=11)
    b = loaded.sample(2, seed=11)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.data, y.data)
    assert loaded.step_ == trained.step_
    assert ReprKind.parse(loaded.kind) is ReprKind.POSITIONS


def test_resume_matches_uninterrupted(tmp_path, gait):
    clips, skel = gait

    def fresh(steps):
        return MotionDiffusionModel(kind="positions", num_steps=20, train_steps=steps,
                                    batch_size=8, seed=9, lr=3e-4)

    half = fresh(15).fit(clips, skeleton=skel)
    path = tmp_path / "half.ckpt"
    half.save(path)
    resumed = MotionDiffusionModel.load(path, batch_size=8, train_steps=30)
    resumed.continue_fit(clips, skeleton=skel, extra_steps=15)
    full = fresh(30).fit(clips, skeleton=skel)
    resumed_losses = [r["total"] for r in resumed.history_]
    full_losses = [r["total"] for r in full.history_[15:]]
    assert resumed_losses == full_losses


def test_fit_requires_uniform_frames(gait):
    clips, skel = gait
    mixed = clips[:2] + dio.window(clips[2], 8, 8)
    with pytest.raises(ValueError):
        MotionDiffusionModel(train_steps=1).fit(mixed, skeleton=skel)


def test_geometric_toggle_changes_breakdown(gait):
    clips, skel = gait
    on = MotionDiffusionModel(kind="positions", num_steps=10, train_steps=3,
                              batch_size=4, seed=1, geometric=True).fit(clips, skeleton=skel)
    off = MotionDiffusionModel(kind="positions", num_steps=10, train_steps=3,
                               batch_size=4, seed=1, geometric=False).fit(clips, skeleton=skel)
    assert on.history_[0]["pos"] > 0
    assert "pos" not in off.history_[0] or off.history_[0].get("pos", 0.0) == 0.0
    assert off.history_[0]["total"] == off.history_[0]["v"]


def test_gaussian_smoother_transformer(rng):
    sm = GaussianSmoother(sigma=1.0)
    x = rng.normal(size=(3, 20))
    out = sm.fit().transform(x)
    np.testing.assert_allclose(
        out, pp.smooth_array(x, pp.SmootherConfig(sigma=1.0)), atol=1e-15
    )
    assert sm.get_params() == {"sigma": 1.0, "truncate": 4.0}


def test_rotation_kind_training_and_clip_decode(gait):
    clips, skel = gait
    model = MotionDiffusionModel(kind="rot6d", num_steps=10, train_steps=5,
                                 batch_size=4, seed=2, lr=3e-4)
    model.fit(clips, skeleton=skel)
    decoded = model.decode(model.sample(2, seed=0))
    assert decoded[0].clip is not None
    assert decoded[0].clip.joint_rotations.shape == (16, 4, 4)
    norms = np.linalg.norm(decoded[0].clip.joint_rotations, axis=-1)
    assert np.abs(norms - 1.0).max() < 1e-9
