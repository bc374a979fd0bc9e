"""Differentiable operations on :class:`~crossview.nn.autograd.Tensor`.

Each op computes its forward value with numpy (or a dispatched kernel)
and registers per-input gradient closures via ``custom_op``.  Layer
norm and attention are fused: forward and backward both go through
:mod:`crossview.kernels`.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..exceptions import ShapeError
from .autograd import Tensor, as_tensor, custom_op


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return custom_op(
        a.data + b.data,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ],
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return custom_op(
        a.data - b.data,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(-g, b.data.shape)),
        ],
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(-a.data, [(a, lambda g: -g)])


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return custom_op(
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ],
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def grad_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)

    def grad_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)

    return custom_op(out, [(a, grad_a), (b, grad_b)])


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return custom_op(out, [(a, lambda g: g * out)])


def log(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(np.log(a.data), [(a, lambda g: g / a.data)])


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return custom_op(out, [(a, lambda g: g * (1.0 - out * out))])


def relu(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(np.maximum(a.data, 0.0), [(a, lambda g: g * (a.data > 0.0))])


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """Tanh-approximated GELU (keeps the toolkit scipy-free)."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    out = 0.5 * x * (1.0 + t)

    def grad(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)

    return custom_op(out, [(a, grad)])


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - local op name
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy()

    return custom_op(out, [(a, grad)])


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return custom_op(
        a.data.reshape(shape), [(a, lambda g: g.reshape(a.data.shape))]
    )


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return custom_op(
        np.transpose(a.data, axes), [(a, lambda g: np.transpose(g, inverse))]
    )


def getitem(a, idx) -> Tensor:
    """Basic (slice/integer) indexing; never selects an element twice."""
    a = as_tensor(a)

    def grad(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return full

    return custom_op(a.data[idx].copy(), [(a, grad)])


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    parents = []
    start = 0
    for t in tensors:
        width = t.data.shape[axis]
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(start, start + width)
        sl = tuple(sl)
        parents.append((t, lambda g, sl=sl: g[sl]))
        start += width
    return custom_op(out, parents)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    parents = [
        (t, lambda g, i=i: np.take(g, i, axis=axis)) for i, t in enumerate(tensors)
    ]
    return custom_op(out, parents)


def expand(a, shape) -> Tensor:
    """Broadcast to ``shape``; the backward pass sums the extra axes."""
    a = as_tensor(a)
    return custom_op(
        np.broadcast_to(a.data, shape).copy(),
        [(a, lambda g: _unbroadcast(g, a.data.shape))],
    )


# ---------------------------------------------------------------------------
# gathers and normalization
# ---------------------------------------------------------------------------

def embedding(table, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (first axis) at integer ``ids``."""
    table = as_tensor(table)
    ids = np.asarray(ids)

    def grad(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return full

    return custom_op(table.data[ids], [(table, grad)])


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    a = as_tensor(a)
    x = a.data
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True) + eps)
    out = x / norm

    def grad(g):
        dot = (g * x).sum(axis=axis, keepdims=True)
        return g / norm - x * dot / norm**3

    return custom_op(out, [(a, grad)])


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Layer norm over the last axis; fused through the kernel backend."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    shape = a.data.shape
    x2d = np.ascontiguousarray(a.data.reshape(-1, shape[-1]))
    y, mu, rstd = kernels.layer_norm_forward(x2d, gamma.data, beta.data, eps)

    state: dict = {}

    def _backward(g):
        if "grads" not in state:
            g2d = np.ascontiguousarray(g.reshape(-1, shape[-1]))
            state["grads"] = kernels.layer_norm_backward(
                g2d, x2d, gamma.data, mu, rstd
            )
        return state["grads"]

    return custom_op(
        y.reshape(shape),
        [
            (a, lambda g: _backward(g)[0].reshape(shape)),
            (gamma, lambda g: _backward(g)[1]),
            (beta, lambda g: _backward(g)[2]),
        ],
    )


def attention(q, k, v, bias: np.ndarray, scale: float) -> Tensor:
    """Fused scaled dot-product attention.

    ``q``/``k``/``v`` are (B, H, T, D) tensors; ``bias`` is a constant
    (Tq, Tk) additive score matrix (zeros, or a causal mask).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.data.ndim != 4 or k.data.ndim != 4 or v.data.ndim != 4:
        raise ShapeError("attention expects (B, H, T, D) inputs")
    qd = np.ascontiguousarray(q.data)
    kd = np.ascontiguousarray(k.data)
    vd = np.ascontiguousarray(v.data)
    bias = np.ascontiguousarray(bias, dtype=np.float64)
    out, probs = kernels.attention_forward(qd, kd, vd, bias, scale)

    state: dict = {}

    def _backward(g):
        if "grads" not in state:
            state["grads"] = kernels.attention_backward(
                np.ascontiguousarray(g), qd, kd, vd, probs, scale
            )
        return state["grads"]

    return custom_op(
        out,
        [
            (q, lambda g: _backward(g)[0]),
            (k, lambda g: _backward(g)[1]),
            (v, lambda g: _backward(g)[2]),
        ],
    )


def cross_entropy_logits(logits, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean token cross-entropy over masked positions (fused).

    Args:
        logits: (..., V) unnormalized scores.
        targets: integer array matching logits minus the last axis.
        mask: boolean array, same shape as targets; True marks
            positions that contribute to the loss.
    """
    logits = as_tensor(logits)
    vocab = logits.data.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    tgt = np.asarray(targets).reshape(-1)
    msk = np.asarray(mask, dtype=bool).reshape(-1)
    count = int(msk.sum())
    if count == 0:
        raise ShapeError("cross_entropy_logits: mask selects no positions")
    m = flat.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(flat - m).sum(axis=1))
    picked = flat[np.arange(flat.shape[0]), tgt]
    value = float(((lse - picked) * msk).sum() / count)

    def grad(g):
        p = np.exp(flat - lse[:, None])
        p[np.arange(flat.shape[0]), tgt] -= 1.0
        p *= (msk / count)[:, None]
        return (g * p).reshape(logits.data.shape)

    return custom_op(np.float64(value), [(logits, grad)])
