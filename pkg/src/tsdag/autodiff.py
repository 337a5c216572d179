"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

A `Tensor` wraps an ndarray; operations executed while a `Tape` is active
record their adjoints on that tape. `Tape.gradient(loss)` replays the tape
in reverse creation order (a valid reverse topological order, visited
exactly once), so identical tapes produce bitwise identical gradients.

Broadcasting is deliberately restricted: two operands may combine only if
their shapes are equal or one shape is a trailing suffix of the other
(e.g. bias vectors against batches). Anything else needs an explicit
`reshape`/`broadcast_to`. This keeps every adjoint a plain sum over the
leading axes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; non-Tensor operands become constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    vjp: Callable  # grad_out -> tuple of grads aligned with inputs (None entries allowed)


class Tape:
    """Ordered record of primitive operations, usable as a context manager."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._tracked: set[int] = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def _is_tracked(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def _record(self, out: Tensor, inputs: tuple, vjp: Callable):
        self._nodes.append(_Node(out, inputs, vjp))
        self._tracked.add(id(out))

    def gradient(self, loss: Tensor, sources: Sequence[Tensor] | None = None):
        """Return d(loss)/d(source) for every requires_grad leaf (or `sources`).

        `loss` must be a scalar recorded on this tape.
        """
        if loss.shape != ():
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        leaves: dict[int, Tensor] = {}
        produced = {id(node.out) for node in self._nodes}
        for node in reversed(self._nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            in_grads = node.vjp(g)
            for t, ig in zip(node.inputs, in_grads):
                if ig is None or not self._is_tracked(t):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                if t.requires_grad and key not in produced:
                    leaves[key] = t
        if sources is None:
            result = {t: grads[key] for key, t in leaves.items()}
        else:
            result = {}
            for t in sources:
                g = grads.get(id(t))
                if g is None:
                    g = np.zeros_like(t.data)
                result[t] = g
        return result


def gradient(loss: Tensor, sources: Sequence[Tensor] | None = None):
    """Gradient of `loss` on the innermost active tape."""
    tape = _active_tape()
    if tape is None:
        raise RuntimeError("gradient() requires an active Tape")
    return tape.gradient(loss, sources)


# ---------------------------------------------------------------------------
# primitive machinery


def _suffix_reduce(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` over its leading axes down to `shape` (suffix broadcasting adjoint)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra)))


def _check_suffix(a: np.ndarray, b: np.ndarray):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    shorter, longer = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(shorter) == len(longer) or longer[len(longer) - len(shorter):] != shorter:
        raise ValueError(f"shapes {sa} and {sb} do not suffix-broadcast")


def _emit(out_data, inputs: tuple, vjp: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(tape._is_tracked(t) for t in inputs):
        tape._record(out, inputs, vjp)
    return out


def _binary(a, b, fwd, vjp):
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix(a.data, b.data)
    out_data = fwd(a.data, b.data)

    def _vjp(g):
        ga, gb = vjp(g, a.data, b.data, out_data)
        if ga is not None:
            ga = _suffix_reduce(ga, a.data.shape)
        if gb is not None:
            gb = _suffix_reduce(gb, b.data.shape)
        return ga, gb

    return _emit(out_data, (a, b), _vjp)


def _unary(a, fwd, vjp):
    a = as_tensor(a)
    out_data = fwd(a.data)
    return _emit(out_data, (a,), lambda g: (vjp(g, a.data, out_data),))


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y, o: (g, g))


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y, o: (g, -g))


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y, o: (g * y, g * x))


def div(a, b):
    return _binary(a, b, np.divide, lambda g, x, y, o: (g / y, -g * x / (y * y)))


def neg(a):
    return _unary(a, np.negative, lambda g, x, o: -g)


def pow_const(a, p: float):
    p = float(p)
    return _unary(a, lambda x: x ** p, lambda g, x, o: g * p * x ** (p - 1.0))


def exp(a):
    return _unary(a, np.exp, lambda g, x, o: g * o)


def log(a):
    return _unary(a, np.log, lambda g, x, o: g / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda g, x, o: g * 0.5 / o)


def tanh(a):
    return _unary(a, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda g, x, o: g * (x > 0.0))


def sigmoid(a):
    def _fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary(a, _fwd, lambda g, x, o: g * o * (1.0 - o))


def softplus(a):
    # log(1 + e^x), evaluated without overflow
    return _unary(
        a,
        lambda x: np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))),
        lambda g, x, o: g / (1.0 + np.exp(-x)),
    )


def stop_gradient(a):
    a = as_tensor(a)
    return Tensor(a.data.copy())


def where_mask(mask, a, b):
    """Select `a` where `mask` else `b`. The mask is a constant, not a Tensor."""
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or mask.shape != a.shape:
        raise ValueError("where_mask needs mask, a, b of identical shape")
    out_data = np.where(mask, a.data, b.data)
    return _emit(out_data, (a, b), lambda g: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)))


# ---------------------------------------------------------------------------
# shape / structural primitives


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.data.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a, shape):
    """Expand along new leading axes (suffix-compatible only)."""
    a = as_tensor(a)
    shape = tuple(shape)
    if shape[len(shape) - a.ndim:] != a.shape:
        raise ValueError(f"cannot leading-broadcast {a.shape} to {shape}")
    out_data = np.broadcast_to(a.data, shape).copy()
    target = a.data.shape
    return _emit(out_data, (a,), lambda g: (_suffix_reduce(g, target),))


def getitem(a, idx):
    a = as_tensor(a)
    out_data = a.data[idx]
    if np.isscalar(out_data) or out_data.ndim == 0:
        out_data = np.asarray(out_data, dtype=np.float64)

    def _vjp(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return (full,)

    return _emit(out_data, (a,), _vjp)


def concat(parts: Iterable, axis: int = 0):
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)

    def _vjp(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(tape._is_tracked(p) for p in parts):
        tape._record(out, tuple(parts), _vjp)
    return out


def take_along(a, indices, axis: int = -1):
    """Gather with constant integer indices (same rank as `a`)."""
    a = as_tensor(a)
    idx = np.asarray(indices)
    out_data = np.take_along_axis(a.data, idx, axis=axis)
    ax = axis % a.ndim

    def _vjp(g):
        full = np.zeros_like(a.data)
        grids = list(np.ogrid[tuple(slice(0, s) for s in idx.shape)])
        grids[ax] = idx
        np.add.at(full, tuple(grids), g)
        return (full,)

    return _emit(out_data, (a,), _vjp)


# ---------------------------------------------------------------------------
# reductions and linear algebra


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False):
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def _vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _emit(out_data, (a,), _vjp)


def tmean(a, axis=None, keepdims: bool = False):
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    count = float(np.prod([a.data.shape[ax] for ax in axes]))
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def _vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy() / count,)

    return _emit(out_data, (a,), _vjp)


def cumsum(a, axis: int = -1):
    a = as_tensor(a)

    def _vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _emit(np.cumsum(a.data, axis=axis), (a,), _vjp)


def logsumexp(a, axis: int = -1, keepdims: bool = False):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    ex = np.exp(a.data - m)
    s = ex.sum(axis=axis, keepdims=True)
    out_full = np.log(s) + m
    out_data = out_full if keepdims else np.squeeze(out_full, axis=axis)

    def _vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * ex / s,)

    return _emit(out_data, (a,), _vjp)


def softmax(a, axis: int = -1):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    ex = np.exp(a.data - m)
    s = ex / ex.sum(axis=axis, keepdims=True)

    def _vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _emit(s, (a,), _vjp)


def layer_norm(a, eps: float = 1e-5):
    """Normalize the last axis to zero mean / unit variance (no affine part)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def _vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _emit(xhat, (a,), _vjp)


def matmul(a, b):
    """`a @ b` where `a` is (..., m, k) and `b` is (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2:
        raise ValueError(f"matmul expects a (..., m, k) @ (k, n), got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def _vjp(g):
        ga = g @ b.data.T
        k, n = b.data.shape
        gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return ga, gb

    return _emit(out_data, (a, b), _vjp)


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class FDReport:
    """Outcome of a finite-difference gradient check."""

    max_rel_err: float
    passed: bool
    excluded: list = field(default_factory=list)  # (name, flat_index) at non-smooth points
    worst: tuple | None = None  # (name, flat_index, analytic, numeric)


def finite_difference_check(f, params: dict, step: float = 1e-5, tol: float = 1e-4) -> FDReport:
    """Compare analytic gradients of `f` against central finite differences.

    `f` maps a dict of name -> Tensor to a scalar Tensor. Coordinates where the
    forward and backward one-sided differences disagree strongly (a kink, e.g.
    ReLU exactly at 0) are excluded from the pass criterion and reported.
    """
    values = {k: np.asarray(v, dtype=np.float64).copy() for k, v in params.items()}

    def run(vals):
        tensors = {k: Tensor(v, requires_grad=True) for k, v in vals.items()}
        with Tape() as tape:
            out = f(tensors)
            grads = tape.gradient(out, sources=list(tensors.values()))
        return float(out.data), {k: grads[t] for k, t in tensors.items()}

    _, analytic = run(values)

    max_rel = 0.0
    worst = None
    excluded = []
    for name, base in values.items():
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus, _ = run(values)
            flat[i] = orig - step
            f_minus, _ = run(values)
            flat[i] = orig
            f_mid, _ = run(values)
            d_central = (f_plus - f_minus) / (2.0 * step)
            d_fwd = (f_plus - f_mid) / step
            d_bwd = (f_mid - f_minus) / step
            if abs(d_fwd - d_bwd) > 1e-2 * max(1.0, abs(d_fwd), abs(d_bwd)):
                excluded.append((name, i))
                continue
            a = float(analytic[name].reshape(-1)[i])
            rel = abs(a - d_central) / max(abs(a), abs(d_central), 1e-2)
            if rel > max_rel:
                max_rel = rel
                worst = (name, i, a, d_central)
    return FDReport(max_rel_err=max_rel, passed=max_rel < tol, excluded=excluded, worst=worst)
