"""Pure-numpy reference implementations of the hot kernels.

These are the semantic ground truth: the numba versions in
``numba_impl`` must agree with them to float64 round-off.  They are
also the fallback path when numba is unavailable or explicitly
disabled via ``CROSSVIEW_KERNELS=numpy``.
"""

from __future__ import annotations

import numpy as np


def attention_forward(q, k, v, bias, scale):
    """Scaled dot-product attention over a batch of heads.

    Args:
        q: (B, H, Tq, D) queries.
        k: (B, H, Tk, D) keys.
        v: (B, H, Tk, D) values.
        bias: (Tq, Tk) additive score bias (zeros when unused; large
            negative entries implement causal masking).
        scale: multiplier applied to raw scores, typically D ** -0.5.

    Returns:
        (out, probs) with out (B, H, Tq, D) and probs (B, H, Tq, Tk).
    """
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) * scale + bias
    scores = scores - scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    out = np.matmul(probs, v)
    return out, probs


def attention_backward(dout, q, k, v, probs, scale):
    """Gradients of attention_forward w.r.t. q, k and v."""
    dv = np.matmul(np.swapaxes(probs, -1, -2), dout)
    dprobs = np.matmul(dout, np.swapaxes(v, -1, -2))
    # softmax backward: ds = p * (dp - sum_j dp_j p_j)
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dq = np.matmul(dscores, k) * scale
    dk = np.matmul(np.swapaxes(dscores, -1, -2), q) * scale
    return dq, dk, dv


def layer_norm_forward(x, gamma, beta, eps):
    """Row-wise layer norm over the last axis of a 2-D array.

    Returns (y, mean, rstd); mean and rstd are kept for the backward
    pass.
    """
    mean = x.mean(axis=1)
    var = ((x - mean[:, None]) ** 2).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gamma + beta
    return y, mean, rstd


def layer_norm_backward(dy, x, gamma, mean, rstd):
    """Gradients of layer_norm_forward w.r.t. x, gamma and beta."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = dy * gamma
    dx = rstd[:, None] * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    return dx, dgamma, dbeta


def adamw_update(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, step):
    """One decoupled-weight-decay Adam step, in place on 1-D views."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    param -= lr * weight_decay * param
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def lcs_length(a, b):
    """Length of the longest common subsequence of two int sequences."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    prev = np.zeros(b.size + 1, dtype=np.int64)
    for i in range(a.size):
        cur = np.zeros(b.size + 1, dtype=np.int64)
        for j in range(b.size):
            if a[i] == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = max(prev[j + 1], cur[j])
        prev = cur
    return int(prev[b.size])
