"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 ndarray and remembers how it was
produced; ``backward()`` walks the graph in reverse topological order
and accumulates gradients into leaves created with ``requires_grad``.
All differentiable operations live in :mod:`crossview.nn.ops`; fused
ops elsewhere build nodes through :func:`custom_op`.

Compute is float64 throughout so finite-difference gradient checks at
step 1e-4 are meaningful; persistence formats downcast to float32.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable

import numpy as np

_GRAD_ENABLED = [True]

GradFn = Callable[[np.ndarray], np.ndarray]


class Tensor:
    """A node in the computation graph.

    Attributes:
        data: the float64 value.
        grad: accumulated gradient after ``backward()`` (None before).
        requires_grad: whether gradients flow into this node.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: list[tuple[Tensor, GradFn]] = []

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Backpropagate from a scalar node."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for parent, gradfn in node._parents:
                piece = gradfn(g)
                if parent.grad is None:
                    parent.grad = piece.astype(np.float64, copy=True)
                else:
                    parent.grad += piece

    # Small operator sugar; the full op set lives in crossview.nn.ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def Parameter(data) -> Tensor:
    """A leaf tensor that receives gradients."""
    return Tensor(data, requires_grad=True)


@contextmanager
def no_grad():
    """Disable graph construction inside the block (pure inference)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


def custom_op(data: np.ndarray, parents: Iterable[tuple[Tensor, GradFn]]) -> Tensor:
    """Create a graph node from a fused forward value.

    ``parents`` maps each input tensor to a closure producing its
    gradient contribution from the output gradient.  Inputs whose
    ``requires_grad`` is False are dropped, and when no input needs a
    gradient (or grads are globally disabled) the node is a constant.
    """
    if not grad_enabled():
        return Tensor(data)
    kept = [(t, fn) for t, fn in parents if t.requires_grad]
    out = Tensor(data, requires_grad=bool(kept))
    out._parents = kept
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
