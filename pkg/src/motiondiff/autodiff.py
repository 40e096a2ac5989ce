"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tape records every intermediate of a forward pass in creation order,
which is already a valid topological order; the backward sweep walks it
once in reverse, accumulating gradients additively at fan-out points.
Operands that are not Vars are treated as constants. Dtypes follow the
inputs (float64 for gradient checking, float32 for speed).
"""

import numpy as np
from scipy.special import erf as _erf

# python floats (not numpy scalars) so float32 inputs are not promoted
_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))
_ERF_DERIV = float(2.0 / np.sqrt(np.pi))


class TapeConsumedError(RuntimeError):
    """backward() was called twice on the same tape."""


class Tape:
    """Recorded computation graph for one forward pass."""

    def __init__(self):
        self._nodes = []
        self.consumed = False

    def leaf(self, value):
        """Register an input/parameter the backward pass should reach."""
        return Var(np.asarray(value), self)

    def _record(self, var):
        self._nodes.append(var)

    def backward(self, output, output_gradient=None):
        """Propagate gradients from ``output`` back to every leaf.

        ``output_gradient`` defaults to ones (i.e. d(sum)/d(node)); pass an
        array of output shape to seed arbitrary cotangents.
        """
        if self.consumed:
            raise TapeConsumedError("tape already backpropagated; rebuild the graph")
        self.consumed = True
        if output_gradient is None:
            output_gradient = np.ones_like(output.value)
        else:
            output_gradient = np.asarray(output_gradient, dtype=output.value.dtype)
            if output_gradient.shape != output.value.shape:
                raise ValueError("output_gradient shape mismatch")
        output.grad = output_gradient
        for node in reversed(self._nodes):
            if node.grad is None or node._vjp is None:
                continue
            for parent, pgrad in node._vjp(node.grad):
                if pgrad is None:
                    continue
                if parent.grad is None:
                    parent.grad = pgrad
                else:
                    parent.grad = parent.grad + pgrad

    def __len__(self):
        return len(self._nodes)


class Var:
    """One node: a value plus how to send gradients to its parents."""

    __slots__ = ("value", "grad", "tape", "_vjp")

    # make ndarray <op> Var dispatch to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, tape, vjp=None):
        self.value = np.asarray(value)
        self.grad = None
        self.tape = tape
        self._vjp = vjp
        tape._record(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    # arithmetic operators; plain arrays/scalars act as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def _value(x):
    if isinstance(x, Var):
        return x.value
    if isinstance(x, (int, float)):
        return x  # weak scalar: no dtype promotion of float32 operands
    return np.asarray(x)


def _tape_of(*operands):
    for x in operands:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(grad, shape):
    """Sum a gradient over the dimensions numpy broadcasting introduced."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    av, bv = _value(a), _value(b)
    out_tape = _tape_of(a, b)

    def vjp(g):
        return (
            (a, _unbroadcast(g, av.shape)) if isinstance(a, Var) else (a, None),
            (b, _unbroadcast(g, bv.shape)) if isinstance(b, Var) else (b, None),
        )

    return Var(av + bv, out_tape, vjp)


def sub(a, b):
    av, bv = _value(a), _value(b)
    out_tape = _tape_of(a, b)

    def vjp(g):
        return (
            (a, _unbroadcast(g, av.shape)) if isinstance(a, Var) else (a, None),
            (b, _unbroadcast(-g, bv.shape)) if isinstance(b, Var) else (b, None),
        )

    return Var(av - bv, out_tape, vjp)


def mul(a, b):
    av, bv = _value(a), _value(b)
    out_tape = _tape_of(a, b)

    def vjp(g):
        return (
            (a, _unbroadcast(g * bv, av.shape)) if isinstance(a, Var) else (a, None),
            (b, _unbroadcast(g * av, bv.shape)) if isinstance(b, Var) else (b, None),
        )

    return Var(av * bv, out_tape, vjp)


def div(a, b):
    av, bv = _value(a), _value(b)
    out_tape = _tape_of(a, b)

    def vjp(g):
        ga = _unbroadcast(g / bv, av.shape) if isinstance(a, Var) else None
        gb = (
            _unbroadcast(-g * av / (bv * bv), bv.shape) if isinstance(b, Var) else None
        )
        return ((a, ga), (b, gb))

    return Var(av / bv, out_tape, vjp)


def pow_const(a, p):
    av = _value(a)
    out = av**p

    def vjp(g):
        return ((a, g * p * av ** (p - 1)),)

    return Var(out, a.tape, vjp)


def sqrt(a):
    av = _value(a)
    out = np.sqrt(av)

    def vjp(g):
        return ((a, g * (0.5 / out)),)

    return Var(out, a.tape, vjp)


def exp(a):
    out = np.exp(_value(a))

    def vjp(g):
        return ((a, g * out),)

    return Var(out, a.tape, vjp)


def log(a):
    av = _value(a)

    def vjp(g):
        return ((a, g / av),)

    return Var(np.log(av), a.tape, vjp)


def sin(a):
    av = _value(a)

    def vjp(g):
        return ((a, g * np.cos(av)),)

    return Var(np.sin(av), a.tape, vjp)


def cos(a):
    av = _value(a)

    def vjp(g):
        return ((a, -g * np.sin(av)),)

    return Var(np.cos(av), a.tape, vjp)


def erf(a):
    av = _value(a)

    def vjp(g):
        return ((a, g * _ERF_DERIV * np.exp(-av * av)),)

    return Var(_erf(av), a.tape, vjp)


def relu(a):
    av = _value(a)
    mask = av > 0

    def vjp(g):
        return ((a, g * mask),)

    return Var(av * mask, a.tape, vjp)


def gelu(a):
    """Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    av = _value(a)
    cdf = 0.5 * (1.0 + _erf(av * _INV_SQRT2))

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * av * av)
        return ((a, g * (cdf + av * pdf)),)

    return Var(av * cdf, a.tape, vjp)


def softmax(a, axis=-1):
    """Numerically stable softmax along ``axis`` (shift is gradient-free)."""
    av = _value(a)
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((a, out * (g - dot)),)

    return Var(out, a.tape, vjp)


def matmul(a, b):
    av, bv = _value(a), _value(b)
    if np.ndim(av) < 2 or np.ndim(bv) < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out_tape = _tape_of(a, b)

    def vjp(g):
        ga = gb = None
        if isinstance(a, Var):
            ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        if isinstance(b, Var):
            gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ((a, ga), (b, gb))

    return Var(av @ bv, out_tape, vjp)


def transpose(a, axes):
    av = _value(a)
    inverse = np.argsort(axes)

    def vjp(g):
        return ((a, g.transpose(inverse)),)

    return Var(av.transpose(axes), a.tape, vjp)


def reshape(a, shape):
    av = _value(a)

    def vjp(g):
        return ((a, g.reshape(av.shape)),)

    return Var(av.reshape(shape), a.tape, vjp)


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(
        isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None
        for i in items
    )


def getitem(a, idx):
    av = _value(a)
    basic = _is_basic_index(idx)

    def vjp(g):
        full = np.zeros_like(av)
        if basic:  # no repeated positions possible; plain assignment is fast
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return ((a, full),)

    return Var(av[idx], a.tape, vjp)


def scatter(a, idx, shape):
    """Place ``a`` into zeros of ``shape`` at ``idx`` (inverse of getitem)."""
    av = _value(a)
    out = np.zeros(shape, dtype=av.dtype)
    out[idx] = av

    def vjp(g):
        return ((a, g[idx]),)

    return Var(out, a.tape, vjp)


def concat(parts, axis):
    vals = [_value(p) for p in parts]
    out_tape = _tape_of(*parts)
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        pieces = np.split(g, sizes, axis=axis)
        return tuple(
            (p, piece if isinstance(p, Var) else None)
            for p, piece in zip(parts, pieces)
        )

    return Var(np.concatenate(vals, axis=axis), out_tape, vjp)


def stack(parts, axis):
    vals = [_value(p) for p in parts]
    out_tape = _tape_of(*parts)

    def vjp(g):
        pieces = np.split(g, len(vals), axis=axis)
        return tuple(
            (p, np.squeeze(piece, axis=axis) if isinstance(p, Var) else None)
            for p, piece in zip(parts, pieces)
        )

    return Var(np.stack(vals, axis=axis), out_tape, vjp)


def reduce_sum(a, axis=None, keepdims=False):
    av = _value(a)

    def vjp(g):
        return ((a, _spread(g, av.shape, axis, keepdims)),)

    return Var(av.sum(axis=axis, keepdims=keepdims), a.tape, vjp)


def reduce_mean(a, axis=None, keepdims=False):
    av = _value(a)
    count = av.size if axis is None else int(
        np.prod([av.shape[ax] for ax in np.atleast_1d(axis)])
    )

    def vjp(g):
        return ((a, _spread(g, av.shape, axis, keepdims) / count),)

    return Var(av.mean(axis=axis, keepdims=keepdims), a.tape, vjp)


def _spread(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 else np.full(shape, g)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sinc_sq(s):
    """sin(sqrt(s))/sqrt(s) as a smooth function of s = angle^2.

    Analytic at s = 0, so Rodrigues-style decodes stay differentiable
    through zero rotations.
    """
    sv = _value(s)
    out = _sinc_sq_val(sv)

    def vjp(g):
        return ((s, g * _sinc_sq_deriv(sv)),)

    return Var(out, s.tape, vjp)


def versine_sq(s):
    """(1 - cos(sqrt(s)))/s as a smooth function of s = angle^2."""
    sv = _value(s)
    out = _versine_sq_val(sv)

    def vjp(g):
        return ((s, g * _versine_sq_deriv(sv)),)

    return Var(out, s.tape, vjp)


def _sinc_sq_val(s):
    small = s < 1e-8
    safe = np.where(small, 1.0, s)
    t = np.sqrt(safe)
    return np.where(small, 1.0 - s / 6.0 + s * s / 120.0, np.sin(t) / t)


def _sinc_sq_deriv(s):
    small = s < 1e-6
    safe = np.where(small, 1.0, s)
    t = np.sqrt(safe)
    exact = (t * np.cos(t) - np.sin(t)) / (2.0 * safe * t)
    series = -1.0 / 6.0 + s / 60.0 - s * s / 1680.0
    return np.where(small, series, exact)


def _versine_sq_val(s):
    small = s < 1e-8
    safe = np.where(small, 1.0, s)
    t = np.sqrt(safe)
    # 1 - cos(t) as 2 sin^2(t/2) avoids cancellation for small t
    versine = 2.0 * np.sin(0.5 * t) ** 2
    return np.where(small, 0.5 - s / 24.0 + s * s / 720.0, versine / safe)


def _versine_sq_deriv(s):
    small = s < 1e-6
    safe = np.where(small, 1.0, s)
    t = np.sqrt(safe)
    versine = 2.0 * np.sin(0.5 * t) ** 2
    exact = (safe * np.sin(t) / (2.0 * t) - versine) / (safe * safe)
    series = -1.0 / 24.0 + s / 360.0 - s * s / 13440.0
    return np.where(small, series, exact)
