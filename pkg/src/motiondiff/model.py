"""Estimator-style API: encode/normalize as a transformer, train/sample as a
model, smooth as a transformer. Wraps the functional modules so pipelines
and parameter search compose the usual way (get_params/set_params work)."""

import time

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import dataio, denoiser, diffusion, losses, postprocess, representation as rep
from .representation import FeatureMatrix, FeatureStats, ReprKind


class MotionFeatureEncoder(BaseEstimator, TransformerMixin):
    """Clips -> (normalized) feature matrices under one representation.

    fit() learns per-dimension z-score statistics on the training clips;
    transform()/inverse_transform() move between clip and feature space.
    """

    def __init__(self, kind="positions", normalize=True):
        self.kind = kind
        self.normalize = normalize

    def fit(self, clips, y=None, skeleton=None):
        if skeleton is None:
            raise ValueError("fit requires skeleton=...")
        kind = ReprKind.parse(self.kind)
        encoded = [rep.encode(c, kind, skeleton) for c in clips]
        self.skeleton_ = skeleton
        self.stats_ = FeatureStats.fit(encoded)
        self.feature_dim_ = encoded[0].data.shape[0]
        return self

    def transform(self, clips):
        self._check_fitted()
        kind = ReprKind.parse(self.kind)
        out = []
        for c in clips:
            fm = rep.encode(c, kind, self.skeleton_)
            data = self.stats_.normalize(fm.data) if self.normalize else fm.data
            out.append(FeatureMatrix(kind=kind, data=data, joint_count=fm.joint_count))
        return out

    def inverse_transform(self, feature_matrices, fps=20.0):
        self._check_fitted()
        out = []
        for fm in feature_matrices:
            data = self.stats_.denormalize(fm.data) if self.normalize else fm.data
            raw = FeatureMatrix(kind=fm.kind, data=data, joint_count=fm.joint_count)
            out.append(rep.decode(raw, self.skeleton_, fps=fps))
        return out

    def _check_fitted(self):
        if not hasattr(self, "stats_"):
            raise NotFittedError("MotionFeatureEncoder is not fitted")


class GaussianSmoother(BaseEstimator, TransformerMixin):
    """Stateless temporal smoother for feature matrices or (D, N) arrays."""

    def __init__(self, sigma=1.5, truncate=4.0):
        self.sigma = sigma
        self.truncate = truncate

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        cfg = postprocess.SmootherConfig(sigma=self.sigma, truncate=self.truncate)
        single = isinstance(X, (FeatureMatrix, np.ndarray))
        items = [X] if single else list(X)
        out = [
            postprocess.gaussian_smooth(x, cfg)
            if isinstance(x, FeatureMatrix)
            else postprocess.smooth_array(x, cfg)
            for x in items
        ]
        return out[0] if single else out


class MotionDiffusionModel(BaseEstimator):
    """Unconditional motion generator: fit on clips, sample new ones.

    Training noises encoded clips with a cosine schedule, predicts the v
    target with a small transformer, and optionally adds the geometric
    losses (position through FK, velocity, foot contact).
    """

    def __init__(self, kind="positions", num_steps=100, latent_dim=64, num_layers=2,
                 num_heads=2, ffn_dim=128, activation="gelu", lambda_pos=1.0,
                 lambda_vel=1.0, lambda_fc=1.0, geometric=True, lr=1e-4,
                 batch_size=64, train_steps=1000, seed=0, dtype="float32",
                 contact_speed_threshold=0.01, contact_height_threshold=0.05,
                 sigma_mode="posterior", log_every=0):
        self.kind = kind
        self.num_steps = num_steps
        self.latent_dim = latent_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.ffn_dim = ffn_dim
        self.activation = activation
        self.lambda_pos = lambda_pos
        self.lambda_vel = lambda_vel
        self.lambda_fc = lambda_fc
        self.geometric = geometric
        self.lr = lr
        self.batch_size = batch_size
        self.train_steps = train_steps
        self.seed = seed
        self.dtype = dtype
        self.contact_speed_threshold = contact_speed_threshold
        self.contact_height_threshold = contact_height_threshold
        self.sigma_mode = sigma_mode
        self.log_every = log_every

    # -- training ----------------------------------------------------------

    def fit(self, clips, y=None, skeleton=None, on_step=None):
        """Train from scratch on a list of MotionClips (uniform frame count)."""
        if skeleton is None:
            raise ValueError("fit requires skeleton=...")
        self._setup(clips, skeleton)
        rng = np.random.default_rng(self.seed)
        self.params_ = denoiser.init_params(self.config_, rng)
        self.opt_state_ = denoiser.AdamState.init(self.params_)
        self.step_ = 0
        self.history_ = []
        self._rng = rng
        self._train(self.train_steps, on_step)
        return self

    def continue_fit(self, clips, skeleton=None, extra_steps=None, on_step=None):
        """Resume training (after load()) on the same dataset."""
        self._check_fitted()
        skeleton = skeleton if skeleton is not None else self.skeleton_
        self._setup(clips, skeleton)
        if not hasattr(self, "history_"):
            self.history_ = []
        steps = extra_steps if extra_steps is not None else max(
            0, self.train_steps - self.step_
        )
        self._train(steps, on_step)
        return self

    def _setup(self, clips, skeleton):
        kind = ReprKind.parse(self.kind)
        if not clips:
            raise ValueError("empty training set")
        frame_counts = {c.num_frames for c in clips}
        if len(frame_counts) != 1:
            raise ValueError(f"clips must share a frame count, got {sorted(frame_counts)}")
        n_frames = frame_counts.pop()
        self.skeleton_ = skeleton
        self.fps_ = clips[0].fps
        encoded = [rep.encode(c, kind, skeleton) for c in clips]
        if not hasattr(self, "stats_"):
            self.stats_ = FeatureStats.fit(encoded)
        dt = np.dtype(self.dtype)
        self._data = np.stack(
            [self.stats_.normalize(fm.data) for fm in encoded], axis=0
        ).astype(dt)
        self.feature_dim_ = self._data.shape[1]
        if not hasattr(self, "schedule_"):
            self.schedule_ = diffusion.cosine_schedule(self.num_steps)
        if not hasattr(self, "config_"):
            self.config_ = denoiser.DenoiserConfig(
                feature_dim=self.feature_dim_,
                max_frames=n_frames,
                latent_dim=self.latent_dim,
                num_layers=self.num_layers,
                num_heads=self.num_heads,
                ffn_dim=self.ffn_dim,
                activation=self.activation,
                dtype=self.dtype,
            )
        self.loss_config_ = losses.LossConfig(
            lambda_pos=self.lambda_pos,
            lambda_vel=self.lambda_vel,
            lambda_fc=self.lambda_fc,
            geometric_enabled=self.geometric,
        )
        labels = None
        if self.geometric and self.lambda_fc > 0:
            labels = np.stack(
                [
                    losses.extract_foot_contacts(
                        c, skeleton,
                        speed_threshold=self.contact_speed_threshold,
                        height_threshold=self.contact_height_threshold,
                    )
                    for c in clips
                ],
                axis=0,
            )
        self.geometry_ = denoiser.GeometryContext(
            kind=ReprKind.parse(self.kind),
            skel=skeleton,
            stats=self.stats_,
            contact_labels=labels,
        )

    def _train(self, steps, on_step=None):
        n = self._data.shape[0]
        for _ in range(steps):
            ids = self._rng.integers(0, n, size=min(self.batch_size, n))
            batch = self._data[ids]
            t0 = time.perf_counter()
            self.params_, self.opt_state_, breakdown = denoiser.train_step(
                self.params_, self.config_, batch, ids, self.schedule_,
                self.loss_config_, self.opt_state_, self._rng, lr=self.lr,
                geometry=self.geometry_ if self.geometric else None,
            )
            elapsed_ms = (time.perf_counter() - t0) * 1000.0
            self.step_ += 1
            record = {"step": self.step_, "ms": elapsed_ms}
            record.update(breakdown)
            self.history_.append(record)
            if on_step is not None:
                on_step(record)
            if self.log_every and self.step_ % self.log_every == 0:
                print(f"step {self.step_}: total={breakdown['total']:.5f}")

    # -- generation --------------------------------------------------------

    def sample(self, count, seed=0, smooth=False, sigma=1.5, truncate=4.0,
               num_frames=None):
        """Generate ``count`` feature matrices (denormalized, optionally
        smoothed along time). Deterministic per seed."""
        self._check_fitted()
        n_frames = num_frames or self.config_.max_frames
        rng = np.random.default_rng(seed)
        model_fn = denoiser.make_sampler(self.params_, self.config_)
        raw = diffusion.sample(
            model_fn, self.schedule_, (count, self.feature_dim_, n_frames), rng,
            sigma_mode=self.sigma_mode, dtype=self.config_.np_dtype,
        )
        kind = ReprKind.parse(self.kind)
        out = []
        smoother = postprocess.SmootherConfig(sigma=sigma, truncate=truncate) if smooth else None
        for i in range(count):
            data = self.stats_.denormalize(raw[i].astype(np.float64))
            fm = FeatureMatrix(kind=kind, data=data, joint_count=self.skeleton_.joint_count)
            if smoother is not None:
                fm = postprocess.gaussian_smooth(fm, smoother)
            out.append(fm)
        return out

    def decode(self, feature_matrices):
        """Decode sampled features to DecodedMotion (positions, maybe clip)."""
        self._check_fitted()
        return [rep.decode(fm, self.skeleton_, fps=self.fps_) for fm in feature_matrices]

    def sample_positions(self, count, seed=0, smooth=False, sigma=1.5, truncate=4.0):
        """Convenience: sampled clips as world joint positions (N, J, 3)."""
        return [d.positions for d in self.decode(
            self.sample(count, seed=seed, smooth=smooth, sigma=sigma, truncate=truncate)
        )]

    # -- persistence -------------------------------------------------------

    def save(self, path):
        self._check_fitted()
        ckpt = dataio.Checkpoint(
            config=self.config_,
            params=self.params_,
            kind=ReprKind.parse(self.kind),
            betas=self.schedule_.beta,
            stats=self.stats_,
            skel=self.skeleton_,
            loss_config=self.loss_config_,
            step=self.step_,
            seed=self.seed,
            lr=self.lr,
            fps=getattr(self, "fps_", 20.0),
            rng_state=dataio.encode_rng_state(self._rng) if hasattr(self, "_rng") else None,
            adam=getattr(self, "opt_state_", None),
        )
        dataio.save_checkpoint(path, ckpt)

    @classmethod
    def load(cls, path, **overrides):
        """Rebuild a fitted model from a checkpoint. Hyperparameters that
        only matter for further training (batch_size, train_steps) come from
        ``overrides`` or keep their defaults."""
        ckpt = dataio.load_checkpoint(path)
        cfg = ckpt.config
        model = cls(
            kind=ckpt.kind.value,
            num_steps=len(ckpt.betas),
            latent_dim=cfg.latent_dim,
            num_layers=cfg.num_layers,
            num_heads=cfg.num_heads,
            ffn_dim=cfg.ffn_dim,
            activation=cfg.activation,
            lambda_pos=ckpt.loss_config.lambda_pos,
            lambda_vel=ckpt.loss_config.lambda_vel,
            lambda_fc=ckpt.loss_config.lambda_fc,
            geometric=ckpt.loss_config.geometric_enabled,
            lr=ckpt.lr,
            seed=ckpt.seed,
            dtype=cfg.dtype,
            **overrides,
        )
        model.config_ = cfg
        model.params_ = ckpt.params
        model.schedule_ = diffusion.DiffusionSchedule(beta=ckpt.betas)
        model.stats_ = ckpt.stats
        model.skeleton_ = ckpt.skel
        model.loss_config_ = ckpt.loss_config
        model.feature_dim_ = cfg.feature_dim
        model.step_ = ckpt.step
        model.fps_ = ckpt.fps
        model.history_ = []
        if ckpt.adam is not None:
            model.opt_state_ = ckpt.adam
        if ckpt.rng_state is not None:
            model._rng = dataio.restore_rng(ckpt.rng_state)
        return model

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("MotionDiffusionModel is not fitted")
