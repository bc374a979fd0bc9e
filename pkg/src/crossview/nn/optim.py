"""AdamW with decoupled weight decay over a named parameter table."""

from __future__ import annotations

import numpy as np

from .. import kernels
from .autograd import Tensor


class AdamW:
    """Adam with decoupled weight decay.

    Parameters are visited in sorted-name order so updates are
    reproducible.  One-dimensional parameters (biases, norm scales,
    gates) are exempt from weight decay, following common practice.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 3e-5,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self._v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            decay = 0.0 if p.data.ndim <= 1 else self.weight_decay
            kernels.adamw_update(
                p.data.reshape(-1),
                np.ascontiguousarray(p.grad, dtype=np.float64).reshape(-1),
                self._m[name].reshape(-1),
                self._v[name].reshape(-1),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                decay,
                self.step_count,
            )
