"""Noise schedules, forward noising, v-parameterization algebra, sampling loop.

Timesteps are 1-based: t in [1, T], stored in 0-based arrays (index t-1).
All functions broadcast over a leading batch dimension when t is an array.
"""

from dataclasses import dataclass, field

import numpy as np

from .validation import check_same_shape


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step beta with derived alpha and cumulative alpha-bar tables."""

    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or len(beta) < 2:
            raise ValueError("schedule needs at least T=2 steps")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ValueError("every beta must lie in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        if np.any(np.diff(alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def num_steps(self):
        return len(self.beta)

    def alpha_bar_at(self, t):
        """alpha_bar for 1-based t; t = 0 returns 1 (no noise)."""
        t = np.asarray(t)
        return np.where(t == 0, 1.0, self.alpha_bar[np.maximum(t, 1) - 1])


@dataclass(frozen=True)
class NoisyBatch:
    """A forward-noised sample: x_t together with the t and noise that made it."""

    x_t: np.ndarray
    t: np.ndarray
    epsilon: np.ndarray


def draw_noisy_batch(schedule, x0, rng, t=None):
    """Noise x0 at uniformly drawn (or given) timesteps; returns a NoisyBatch.

    x0 may carry a leading batch dimension, in which case t is per-sample.
    """
    x0 = np.asarray(x0)
    if t is None:
        size = x0.shape[0] if x0.ndim == 3 else None
        t = rng.integers(1, schedule.num_steps + 1, size=size)
    t = _check_t(schedule, t)
    epsilon = rng.standard_normal(size=x0.shape).astype(x0.dtype, copy=False)
    return NoisyBatch(x_t=q_sample(schedule, x0, t, epsilon), t=t, epsilon=epsilon)


def cosine_schedule(num_steps, s=0.008, max_beta=0.999):
    """Cosine alpha-bar schedule; betas derived and clamped to (0, max_beta].

    alpha_bar follows f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2);
    the stored alpha_bar is the exact cumulative product of the clamped betas.
    """
    if num_steps < 2:
        raise ValueError("num_steps must be >= 2")
    t = np.arange(num_steps + 1, dtype=np.float64)
    f = np.cos(((t / num_steps) + s) / (1.0 + s) * (np.pi / 2.0)) ** 2
    alpha_bar = f / f[0]
    beta = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
    beta = np.clip(beta, 1e-12, max_beta)
    return DiffusionSchedule(beta=beta)


def _check_t(schedule, t):
    t = np.asarray(t, dtype=int)
    if np.any(t < 1) or np.any(t > schedule.num_steps):
        raise ValueError(f"timestep out of range [1, {schedule.num_steps}]")
    return t


def _coef(values, t, target_ndim):
    """Gather per-t coefficients and pad trailing dims for broadcasting."""
    c = values[t - 1]
    extra = target_ndim - np.ndim(c)
    return c.reshape(np.shape(c) + (1,) * extra) if extra else c


def q_sample(schedule, x0, t, epsilon):
    """Forward noising: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    x0 = np.asarray(x0)
    epsilon = np.asarray(epsilon)
    check_same_shape(x0, epsilon, "x0", "epsilon")
    t = _check_t(schedule, t)
    ab = _coef(schedule.alpha_bar, t, x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * epsilon


def compute_v(schedule, x0, epsilon, t):
    """Velocity-style target: sqrt(ab_t) * eps - sqrt(1 - ab_t) * x0."""
    x0 = np.asarray(x0)
    epsilon = np.asarray(epsilon)
    check_same_shape(x0, epsilon, "x0", "epsilon")
    t = _check_t(schedule, t)
    ab = _coef(schedule.alpha_bar, t, x0.ndim)
    return np.sqrt(ab) * epsilon - np.sqrt(1.0 - ab) * x0


def v_to_x0(schedule, x_t, v, t):
    """Invert (x_t, v) to the clean sample: sqrt(ab)*x_t - sqrt(1-ab)*v."""
    x_t = np.asarray(x_t)
    v = np.asarray(v)
    check_same_shape(x_t, v, "x_t", "v")
    t = _check_t(schedule, t)
    ab = _coef(schedule.alpha_bar, t, x_t.ndim)
    return np.sqrt(ab) * x_t - np.sqrt(1.0 - ab) * v


def v_to_eps(schedule, x_t, v, t):
    """Invert (x_t, v) to the noise: sqrt(1-ab)*x_t + sqrt(ab)*v."""
    x_t = np.asarray(x_t)
    v = np.asarray(v)
    check_same_shape(x_t, v, "x_t", "v")
    t = _check_t(schedule, t)
    ab = _coef(schedule.alpha_bar, t, x_t.ndim)
    return np.sqrt(1.0 - ab) * x_t + np.sqrt(ab) * v


def posterior_sigma(schedule, t, mode="posterior"):
    """Reverse-step noise scale: sqrt of the posterior variance (default)
    or sqrt(beta_t) when mode='beta'."""
    t = _check_t(schedule, t)
    beta = schedule.beta[t - 1]
    if mode == "beta":
        return np.sqrt(beta)
    if mode != "posterior":
        raise ValueError("mode must be 'posterior' or 'beta'")
    ab = schedule.alpha_bar[t - 1]
    ab_prev = schedule.alpha_bar_at(t - 1)
    return np.sqrt((1.0 - ab_prev) / (1.0 - ab) * beta)


def p_sample_step(schedule, x_t, t, v_pred, rng, sigma_mode="posterior", add_noise=True):
    """One ancestral reverse step from x_t to x_{t-1} given a v prediction.

    No noise is added at t = 1 (or when add_noise is False).
    """
    x_t = np.asarray(x_t)
    v_pred = np.asarray(v_pred)
    check_same_shape(x_t, v_pred, "x_t", "v_pred")
    t = int(_check_t(schedule, t))
    eps_hat = v_to_eps(schedule, x_t, v_pred, t)
    beta = schedule.beta[t - 1]
    alpha = schedule.alpha[t - 1]
    ab = schedule.alpha_bar[t - 1]
    mean = (x_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
    if t == 1 or not add_noise:
        return mean
    sigma = posterior_sigma(schedule, t, mode=sigma_mode)
    z = rng.standard_normal(size=x_t.shape).astype(x_t.dtype, copy=False)
    return mean + sigma * z


def sample(model, schedule, shape, rng, sigma_mode="posterior", add_noise=True, dtype=np.float64):
    """Run the full reverse loop from pure Gaussian noise.

    ``model`` maps (x_t, t) to a v prediction of the same shape. The result
    is deterministic given the rng seed.
    """
    x = rng.standard_normal(size=shape).astype(dtype, copy=False)
    for t in range(schedule.num_steps, 0, -1):
        v_pred = np.asarray(model(x, t))
        if v_pred.shape != x.shape:
            raise ValueError(
                f"model returned shape {v_pred.shape}, expected {x.shape}"
            )
        x = p_sample_step(
            schedule, x, t, v_pred, rng, sigma_mode=sigma_mode, add_noise=add_noise
        )
    return x
