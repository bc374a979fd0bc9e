"""Throughput comparison of the numba kernels against the numpy reference.

Imports both backends directly (ignoring CROSSVIEW_KERNELS) and times
each hot kernel on shapes close to what training actually runs. Numba
compile time is excluded by a warmup pass.

    python benchmarks/bench_kernels.py --repeats 30
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from crossview.kernels import numpy_ref

try:
    from crossview.kernels import numba_impl
except ImportError:
    numba_impl = None


def best_of(fn, repeats: int) -> float:
    """Best wall time in milliseconds over `repeats` calls."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def make_cases(rng: np.random.Generator):
    b, h, s, d = 8, 4, 96, 32
    q, k, v = (rng.normal(size=(b, h, s, d)) for _ in range(3))
    bias = np.triu(np.full((s, s), -1e9), k=1)
    scale = d**-0.5
    dout = rng.normal(size=(b, h, s, d))
    probs = numpy_ref.attention_forward(q, k, v, bias, scale)[1]

    x = rng.normal(size=(2048, 256))
    gamma = rng.normal(size=256)
    beta = rng.normal(size=256)
    dy = rng.normal(size=x.shape)
    _, mean, rstd = numpy_ref.layer_norm_forward(x, gamma, beta, 1e-5)

    param = rng.normal(size=512 * 512)
    grad = rng.normal(size=param.size)
    m = np.zeros_like(param)
    vbuf = np.zeros_like(param)

    seq_a = rng.integers(0, 40, size=512)
    seq_b = rng.integers(0, 40, size=512)

    return [
        ("attention_forward",
         lambda impl: impl.attention_forward(q, k, v, bias, scale)),
        ("attention_backward",
         lambda impl: impl.attention_backward(dout, q, k, v, probs, scale)),
        ("layer_norm_forward",
         lambda impl: impl.layer_norm_forward(x, gamma, beta, 1e-5)),
        ("layer_norm_backward",
         lambda impl: impl.layer_norm_backward(dy, x, gamma, mean, rstd)),
        ("adamw_update",
         lambda impl: impl.adamw_update(param, grad, m, vbuf,
                                        1e-4, 0.9, 0.999, 1e-8, 0.01, 1)),
        ("lcs_length",
         lambda impl: impl.lcs_length(seq_a, seq_b)),
    ]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    cases = make_cases(rng)

    print(f"{'kernel':<22} {'numpy ms':>10} {'numba ms':>10} {'speedup':>9}")
    for name, call in cases:
        call(numpy_ref)  # warmup
        ref_ms = best_of(lambda: call(numpy_ref), args.repeats)
        if numba_impl is None:
            print(f"{name:<22} {ref_ms:>10.3f} {'n/a':>10} {'n/a':>9}")
            continue
        call(numba_impl)  # warmup triggers JIT compile
        jit_ms = best_of(lambda: call(numba_impl), args.repeats)
        print(f"{name:<22} {ref_ms:>10.3f} {jit_ms:>10.3f} {ref_ms / jit_ms:>8.2f}x")

    if numba_impl is None:
        print("\nnumba not importable; only the reference backend was timed")


if __name__ == "__main__":
    main()
