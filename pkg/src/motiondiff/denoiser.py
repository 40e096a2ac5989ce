"""Transformer denoiser predicting the v target, with training machinery.

Pipeline per forward pass: sinusoidal timestep embedding -> 2-layer MLP to
the motion feature width -> per-frame concatenation with the noisy motion
-> input projection -> additive sinusoidal positional encoding ->
pre-norm transformer blocks (full self-attention over frames, no mask) ->
final layer norm -> zero-initialized output projection back to feature
width. Gradients come from the autodiff tape recorded during the pass.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import diffusion as dif
from . import losses as losses_mod
from .autodiff import Tape
from .errors import NonFiniteLossError

_ACTIVATIONS = {"gelu": ad.gelu, "relu": ad.relu}


@dataclass
class DenoiserConfig:
    feature_dim: int
    max_frames: int
    latent_dim: int = 64
    num_layers: int = 2
    num_heads: int = 2
    ffn_dim: int = 128
    activation: str = "gelu"
    use_positional_encoding: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("feature_dim", "max_frames", "latent_dim", "num_layers",
                     "num_heads", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.latent_dim % self.num_heads != 0:
            raise ValueError("latent_dim must be divisible by num_heads")
        if self.latent_dim % 2 != 0:
            raise ValueError("latent_dim must be even (sinusoidal tables)")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self):
        return asdict(self)


def desk_config(feature_dim, max_frames, **overrides):
    """CPU-friendly defaults used by the test/acceptance suite."""
    return DenoiserConfig(feature_dim=feature_dim, max_frames=max_frames, **overrides)


def full_config(feature_dim, max_frames, **overrides):
    """Full-scale preset: latent 512, 8 layers, 4 heads, FFN 1024."""
    base = dict(latent_dim=512, num_layers=8, num_heads=4, ffn_dim=1024)
    base.update(overrides)
    return DenoiserConfig(feature_dim=feature_dim, max_frames=max_frames, **base)


def init_params(config, rng):
    """Fan-in-scaled uniform init; output projection zero-initialized."""
    L, F, D = config.latent_dim, config.ffn_dim, config.feature_dim
    dt = config.np_dtype

    def linear(name, fan_in, fan_out, zero=False):
        if zero:
            w = np.zeros((fan_in, fan_out), dtype=dt)
            b = np.zeros(fan_out, dtype=dt)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dt)
            b = rng.uniform(-bound, bound, size=fan_out).astype(dt)
        params[f"{name}_w"] = w
        params[f"{name}_b"] = b

    params = {}
    linear("t_mlp1", L, L)
    linear("t_mlp2", L, D)
    linear("in_proj", 2 * D, L)
    for i in range(config.num_layers):
        params[f"blk{i}_ln1_g"] = np.ones(L, dtype=dt)
        params[f"blk{i}_ln1_b"] = np.zeros(L, dtype=dt)
        linear(f"blk{i}_qkv", L, 3 * L)
        linear(f"blk{i}_attn_out", L, L)
        params[f"blk{i}_ln2_g"] = np.ones(L, dtype=dt)
        params[f"blk{i}_ln2_b"] = np.zeros(L, dtype=dt)
        linear(f"blk{i}_ffn1", L, F)
        linear(f"blk{i}_ffn2", F, L)
    params["final_ln_g"] = np.ones(L, dtype=dt)
    params["final_ln_b"] = np.zeros(L, dtype=dt)
    linear("out_proj", L, D, zero=True)
    return params


def timestep_embedding(t, dim, dtype=np.float64):
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).astype(dtype)


def positional_encoding(num_frames, dim, dtype=np.float64):
    """Standard sinusoidal positional table, shape (num_frames, dim)."""
    pos = np.arange(num_frames, dtype=np.float64)[:, None]
    idx = np.arange(dim // 2, dtype=np.float64)[None, :]
    ang = pos / np.power(10000.0, 2.0 * idx / dim)
    pe = np.zeros((num_frames, dim))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang)
    return pe.astype(dtype)


def _layer_norm(h, gamma, beta, eps=1e-5):
    mu = h.mean(axis=-1, keepdims=True)
    centered = h - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / ad.sqrt(var + eps) * gamma + beta


def _attention(h, pv, prefix, config):
    B, N, L = h.shape
    H = config.num_heads
    dh = L // H
    qkv = ad.matmul(h, pv[f"{prefix}_qkv_w"]) + pv[f"{prefix}_qkv_b"]
    q = ad.transpose(ad.reshape(qkv[:, :, 0:L], (B, N, H, dh)), (0, 2, 1, 3))
    k = ad.transpose(ad.reshape(qkv[:, :, L : 2 * L], (B, N, H, dh)), (0, 2, 1, 3))
    v = ad.transpose(ad.reshape(qkv[:, :, 2 * L :], (B, N, H, dh)), (0, 2, 1, 3))
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * float(1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(attn, v)                                # (B, H, N, dh)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, N, L))
    return ad.matmul(ctx, pv[f"{prefix}_attn_out_w"]) + pv[f"{prefix}_attn_out_b"]


def forward_graph(tape, param_vars, config, x_t, t):
    """Record the forward pass on ``tape``; returns the v prediction Var.

    x_t: constant array (B, D, N); t: int or (B,) ints.
    """
    dt = config.np_dtype
    x_t = np.asarray(x_t, dtype=dt)
    B, D, N = x_t.shape
    if D != config.feature_dim:
        raise ValueError(f"feature dim {D} != configured {config.feature_dim}")
    if N > config.max_frames:
        raise ValueError(f"{N} frames exceeds configured max {config.max_frames}")
    act = _ACTIVATIONS[config.activation]
    pv = param_vars

    temb = timestep_embedding(t, config.latent_dim, dtype=dt)
    if temb.shape[0] == 1 and B > 1:
        temb = np.repeat(temb, B, axis=0)
    temb = ad.matmul(
        act(ad.matmul(tape.leaf(temb), pv["t_mlp1_w"]) + pv["t_mlp1_b"]),
        pv["t_mlp2_w"],
    ) + pv["t_mlp2_b"]                                      # (B, D)

    tokens = np.transpose(x_t, (0, 2, 1))                   # (B, N, D)
    temb_tiled = ad.reshape(temb, (B, 1, D)) * np.ones((1, N, 1), dtype=dt)
    h = ad.concat([tape.leaf(tokens), temb_tiled], axis=-1)  # (B, N, 2D)
    h = ad.matmul(h, pv["in_proj_w"]) + pv["in_proj_b"]      # (B, N, L)
    if config.use_positional_encoding:
        h = h + positional_encoding(N, config.latent_dim, dtype=dt)

    for i in range(config.num_layers):
        p = f"blk{i}"
        normed = _layer_norm(h, pv[f"{p}_ln1_g"], pv[f"{p}_ln1_b"])
        h = h + _attention(normed, pv, p, config)
        normed = _layer_norm(h, pv[f"{p}_ln2_g"], pv[f"{p}_ln2_b"])
        ff = ad.matmul(normed, pv[f"{p}_ffn1_w"]) + pv[f"{p}_ffn1_b"]
        ff = ad.matmul(act(ff), pv[f"{p}_ffn2_w"]) + pv[f"{p}_ffn2_b"]
        h = h + ff

    h = _layer_norm(h, pv["final_ln_g"], pv["final_ln_b"])
    out = ad.matmul(h, pv["out_proj_w"]) + pv["out_proj_b"]  # (B, N, D)
    return ad.transpose(out, (0, 2, 1))                      # (B, D, N)


@dataclass
class ForwardPass:
    """A recorded training-mode forward: output Var, tape, parameter Vars."""

    tape: Tape
    output: object
    param_vars: dict


def forward_training(params, config, x_t, t):
    """Forward pass that keeps the tape for a subsequent backward."""
    x_t = np.asarray(x_t)
    squeeze = x_t.ndim == 2
    if squeeze:
        x_t = x_t[None]
    tape = Tape()
    pv = {k: tape.leaf(v) for k, v in params.items()}
    out = forward_graph(tape, pv, config, x_t, t)
    if squeeze:
        out = ad.reshape(out, out.shape[1:])
    return ForwardPass(tape=tape, output=out, param_vars=pv)


def forward(params, config, x_t, t):
    """Inference-mode forward; returns a plain array shaped like x_t."""
    return forward_training(params, config, x_t, t).output.value


def backward(forward_pass, output_gradient):
    """Parameter gradients for a recorded forward pass.

    Raises TapeConsumedError if the tape was already backpropagated.
    """
    forward_pass.tape.backward(forward_pass.output, output_gradient)
    return {
        name: (var.grad if var.grad is not None else np.zeros_like(var.value))
        for name, var in forward_pass.param_vars.items()
    }


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def init(cls, params):
        return cls(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_update(params, grads, state, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step; returns (new_params, new_state). Zero grads are no-ops."""
    step = state.step + 1
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params[k] = (p - update).astype(p.dtype, copy=False)
        new_m[k] = m.astype(p.dtype, copy=False)
        new_v[k] = v.astype(p.dtype, copy=False)
    return new_params, AdamState(step=step, m=new_m, v=new_v)


@dataclass
class GeometryContext:
    """What the geometric losses need to decode predictions: representation
    kind, skeleton, normalization stats, and per-sample contact labels."""

    kind: object
    skel: object
    stats: object
    contact_labels: np.ndarray | None = None  # (num_clips, N-1, 4), indexed by clip id


def train_step(params, config, batch, batch_ids, schedule, loss_config, opt_state,
               rng, lr=1e-4, geometry=None):
    """One optimization step on a batch of normalized features (B, D, N).

    Draws per-sample timesteps and noise, runs q_sample -> forward -> loss ->
    backward -> Adam. ``batch_ids`` index into geometry.contact_labels for
    the foot-contact term. Returns (params, opt_state, breakdown dict).
    """
    dt = config.np_dtype
    batch = np.asarray(batch, dtype=dt)
    B = batch.shape[0]
    T = schedule.num_steps
    t = rng.integers(1, T + 1, size=B)
    eps = rng.standard_normal(size=batch.shape).astype(dt)

    sqrt_ab = np.sqrt(schedule.alpha_bar[t - 1]).astype(dt).reshape(B, 1, 1)
    sqrt_1mab = np.sqrt(1.0 - schedule.alpha_bar[t - 1]).astype(dt).reshape(B, 1, 1)
    x_t = sqrt_ab * batch + sqrt_1mab * eps
    v_true = sqrt_ab * eps - sqrt_1mab * batch

    fp = forward_training(params, config, x_t, t)
    v_pred = fp.output

    if loss_config.geometric_enabled:
        if geometry is None:
            raise ValueError("geometric losses need a GeometryContext")
        x0_hat_n = sqrt_ab * x_t - sqrt_1mab * v_pred
        std = geometry.stats.std.astype(dt)[None, :, None]
        mean = geometry.stats.mean.astype(dt)[None, :, None]
        x0_hat = x0_hat_n * std + mean
        x0_raw = batch * std + mean
        labels = None
        if geometry.contact_labels is not None:
            labels = geometry.contact_labels[batch_ids]
        loss, breakdown = losses_mod.total_loss(
            schedule, v_true, v_pred, t, x0_raw, x0_hat,
            geometry.kind, geometry.skel, loss_config, labels,
        )
    else:
        loss, breakdown = losses_mod.total_loss(
            schedule, v_true, v_pred, t, None, None, None, None, loss_config
        )

    if not np.isfinite(breakdown["total"]):
        raise NonFiniteLossError(
            f"non-finite loss at optimizer step {opt_state.step + 1}",
            step=opt_state.step + 1,
            breakdown=breakdown,
        )

    fp.tape.backward(loss)
    grads = {
        name: (var.grad if var.grad is not None else np.zeros_like(var.value))
        for name, var in fp.param_vars.items()
    }
    params, opt_state = adam_update(params, grads, opt_state, lr=lr)
    return params, opt_state, breakdown


def make_sampler(params, config):
    """Adapt fixed params to the (x_t, t) -> v callable the sampler expects."""

    def model(x_t, t):
        return forward(params, config, x_t, t)

    return model
