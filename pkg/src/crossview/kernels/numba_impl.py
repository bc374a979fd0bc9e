"""Numba-compiled kernels.

Same contracts as ``numpy_ref``; plain loops so numba can compile them.
``cache=True`` keeps compiled artifacts across processes, and neither
``fastmath`` nor ``parallel`` is used so results stay deterministic.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def attention_forward(q, k, v, bias, scale):
    B, H, Tq, D = q.shape
    Tk = k.shape[2]
    out = np.empty((B, H, Tq, D), dtype=q.dtype)
    probs = np.empty((B, H, Tq, Tk), dtype=q.dtype)
    for b in range(B):
        for h in range(H):
            for i in range(Tq):
                hi = -np.inf
                for j in range(Tk):
                    s = 0.0
                    for d in range(D):
                        s += q[b, h, i, d] * k[b, h, j, d]
                    s = s * scale + bias[i, j]
                    probs[b, h, i, j] = s
                    if s > hi:
                        hi = s
                total = 0.0
                for j in range(Tk):
                    e = math.exp(probs[b, h, i, j] - hi)
                    probs[b, h, i, j] = e
                    total += e
                for j in range(Tk):
                    probs[b, h, i, j] /= total
                for d in range(D):
                    acc = 0.0
                    for j in range(Tk):
                        acc += probs[b, h, i, j] * v[b, h, j, d]
                    out[b, h, i, d] = acc
    return out, probs


@njit(cache=True)
def attention_backward(dout, q, k, v, probs, scale):
    B, H, Tq, D = q.shape
    Tk = k.shape[2]
    dq = np.zeros((B, H, Tq, D), dtype=q.dtype)
    dk = np.zeros((B, H, Tk, D), dtype=q.dtype)
    dv = np.zeros((B, H, Tk, D), dtype=q.dtype)
    dprow = np.empty(Tk, dtype=q.dtype)
    for b in range(B):
        for h in range(H):
            for i in range(Tq):
                dot = 0.0
                for j in range(Tk):
                    s = 0.0
                    for d in range(D):
                        s += dout[b, h, i, d] * v[b, h, j, d]
                    dprow[j] = s
                    dot += s * probs[b, h, i, j]
                for j in range(Tk):
                    ds = probs[b, h, i, j] * (dprow[j] - dot)
                    for d in range(D):
                        dq[b, h, i, d] += ds * k[b, h, j, d] * scale
                        dk[b, h, j, d] += ds * q[b, h, i, d] * scale
                        dv[b, h, j, d] += probs[b, h, i, j] * dout[b, h, i, d]
    return dq, dk, dv


@njit(cache=True)
def layer_norm_forward(x, gamma, beta, eps):
    R, D = x.shape
    y = np.empty((R, D), dtype=x.dtype)
    mean = np.empty(R, dtype=x.dtype)
    rstd = np.empty(R, dtype=x.dtype)
    for r in range(R):
        s = 0.0
        for d in range(D):
            s += x[r, d]
        mu = s / D
        var = 0.0
        for d in range(D):
            diff = x[r, d] - mu
            var += diff * diff
        var /= D
        rs = 1.0 / math.sqrt(var + eps)
        mean[r] = mu
        rstd[r] = rs
        for d in range(D):
            y[r, d] = (x[r, d] - mu) * rs * gamma[d] + beta[d]
    return y, mean, rstd


@njit(cache=True)
def layer_norm_backward(dy, x, gamma, mean, rstd):
    R, D = x.shape
    dx = np.empty((R, D), dtype=x.dtype)
    dgamma = np.zeros(D, dtype=x.dtype)
    dbeta = np.zeros(D, dtype=x.dtype)
    for r in range(R):
        m1 = 0.0
        m2 = 0.0
        for d in range(D):
            xhat = (x[r, d] - mean[r]) * rstd[r]
            dxh = dy[r, d] * gamma[d]
            m1 += dxh
            m2 += dxh * xhat
            dgamma[d] += dy[r, d] * xhat
            dbeta[d] += dy[r, d]
        m1 /= D
        m2 /= D
        for d in range(D):
            xhat = (x[r, d] - mean[r]) * rstd[r]
            dxh = dy[r, d] * gamma[d]
            dx[r, d] = rstd[r] * (dxh - m1 - xhat * m2)
    return dx, dgamma, dbeta


@njit(cache=True)
def adamw_update(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, step):
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for i in range(param.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        mhat = m[i] / c1
        vhat = v[i] / c2
        param[i] -= lr * weight_decay * param[i]
        param[i] -= lr * mhat / (math.sqrt(vhat) + eps)


@njit(cache=True)
def _lcs_length(a, b):
    prev = np.zeros(b.size + 1, dtype=np.int64)
    cur = np.zeros(b.size + 1, dtype=np.int64)
    for i in range(a.size):
        for j in range(b.size):
            if a[i] == b[j]:
                cur[j + 1] = prev[j] + 1
            elif prev[j + 1] >= cur[j]:
                cur[j + 1] = prev[j + 1]
            else:
                cur[j + 1] = cur[j]
        prev, cur = cur, prev
    return prev[b.size]


def lcs_length(a, b):
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    return int(_lcs_length(a, b))
