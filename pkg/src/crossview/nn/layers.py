"""Transformer building blocks in a functional style.

Parameters live in a flat :class:`ParamBag` keyed by dotted names
("enc.block0.attn.wq", ...), which keeps checkpoints a plain named
table and makes optimizer iteration order explicit.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ShapeError, ValidationError
from . import ops
from .autograd import Parameter, Tensor


class ParamBag:
    """Flat mapping from dotted names to trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValidationError(f"duplicate parameter name: {name}")
        p = Parameter(array)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValidationError(
                f"parameter names mismatch (missing={sorted(missing)[:3]}, "
                f"extra={sorted(extra)[:3]})"
            )
        for name, value in state.items():
            p = self._params[name]
            if p.data.shape != value.shape:
                raise ShapeError(
                    f"{name}: checkpoint shape {value.shape} != {p.data.shape}"
                )
            p.data = np.asarray(value, dtype=np.float64).copy()


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# linear / norm
# ---------------------------------------------------------------------------

def add_linear(bag: ParamBag, name: str, rng, d_in: int, d_out: int) -> None:
    bag.add(f"{name}.w", xavier_uniform(rng, d_in, d_out))
    bag.add(f"{name}.b", np.zeros(d_out))


def linear(bag: ParamBag, name: str, x: Tensor) -> Tensor:
    return ops.add(ops.matmul(x, bag[f"{name}.w"]), bag[f"{name}.b"])


def add_layer_norm(bag: ParamBag, name: str, d: int) -> None:
    bag.add(f"{name}.gamma", np.ones(d))
    bag.add(f"{name}.beta", np.zeros(d))


def apply_layer_norm(bag: ParamBag, name: str, x: Tensor) -> Tensor:
    return ops.layer_norm(x, bag[f"{name}.gamma"], bag[f"{name}.beta"])


# ---------------------------------------------------------------------------
# attention / feed-forward
# ---------------------------------------------------------------------------

def add_attention(
    bag: ParamBag, name: str, rng, d_model: int, heads: int, d_kv: int | None = None
) -> None:
    """Projections for (optionally cross-) multi-head attention."""
    if d_model % heads:
        raise ShapeError(f"{name}: heads={heads} must divide d_model={d_model}")
    d_kv = d_model if d_kv is None else d_kv
    add_linear(bag, f"{name}.wq", rng, d_model, d_model)
    add_linear(bag, f"{name}.wk", rng, d_kv, d_model)
    add_linear(bag, f"{name}.wv", rng, d_kv, d_model)
    add_linear(bag, f"{name}.wo", rng, d_model, d_model)


def attention_block(
    bag: ParamBag,
    name: str,
    x_q: Tensor,
    x_kv: Tensor,
    heads: int,
    bias: np.ndarray | None = None,
) -> Tensor:
    """Multi-head attention from x_q over x_kv, (B, T, d) in and out."""
    batch, tq, d_model = x_q.data.shape
    tk = x_kv.data.shape[1]
    dh = d_model // heads

    def split(t: Tensor, length: int) -> Tensor:
        t = ops.reshape(t, (batch, length, heads, dh))
        return ops.transpose(t, (0, 2, 1, 3))

    q = split(linear(bag, f"{name}.wq", x_q), tq)
    k = split(linear(bag, f"{name}.wk", x_kv), tk)
    v = split(linear(bag, f"{name}.wv", x_kv), tk)
    if bias is None:
        bias = np.zeros((tq, tk))
    ctx = ops.attention(q, k, v, bias, dh**-0.5)
    ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (batch, tq, d_model))
    return linear(bag, f"{name}.wo", ctx)


def add_ffn(bag: ParamBag, name: str, rng, d: int, mult: int = 4) -> None:
    add_linear(bag, f"{name}.up", rng, d, mult * d)
    add_linear(bag, f"{name}.down", rng, mult * d, d)


def ffn(bag: ParamBag, name: str, x: Tensor) -> Tensor:
    return linear(bag, f"{name}.down", ops.gelu(linear(bag, f"{name}.up", x)))


def causal_bias(length: int) -> np.ndarray:
    """Additive (T, T) mask: 0 on/below the diagonal, -1e30 above."""
    bias = np.zeros((length, length))
    bias[np.triu_indices(length, k=1)] = -1e30
    return bias
