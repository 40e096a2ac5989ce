"""Small input-validation helpers used at public API boundaries."""

import numpy as np


def check_array(a, name, shape=None, ndim=None, dtype=float, finite=True):
    """Coerce to an ndarray and validate shape/finiteness.

    ``shape`` entries of ``None`` match any size. Returns the coerced array.
    """
    arr = np.asarray(a, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name}: expected {ndim} dimensions, got {arr.ndim}")
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
        for want, got in zip(shape, arr.shape):
            if want is not None and want != got:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    if finite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_positive(value, name):
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def check_timestep(t, num_steps):
    t = int(t)
    if not 1 <= t <= num_steps:
        raise ValueError(f"timestep must be in [1, {num_steps}], got {t}")
    return t


def check_same_shape(a, b, name_a, name_b):
    if a.shape != b.shape:
        raise ValueError(
            f"{name_a} and {name_b} must have matching shapes, "
            f"got {a.shape} vs {b.shape}"
        )
