"""Backend agreement and contract tests for the hot kernels."""

import numpy as np
import pytest

from crossview.kernels import numpy_ref

try:
    from crossview.kernels import numba_impl
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba unavailable")


def python_lcs(a, b):
    """Textbook quadratic LCS, the independent oracle."""
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            if x == y:
                table[i + 1][j + 1] = table[i][j] + 1
            else:
                table[i + 1][j + 1] = max(table[i][j + 1], table[i + 1][j])
    return table[len(a)][len(b)]


class TestLcs:
    def test_hand_cases(self):
        cases = [
            ([1, 2, 3], [1, 3], 2),
            ([1, 2, 3, 4], [4, 3, 2, 1], 1),
            ([], [1, 2], 0),
            ([5, 5, 5], [5, 5], 2),
            ([1, 2, 3], [1, 2, 3], 3),
        ]
        for a, b, want in cases:
            assert numpy_ref.lcs_length(np.array(a), np.array(b)) == want

    def test_random_against_python_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            a = rng.integers(0, 6, size=rng.integers(0, 30))
            b = rng.integers(0, 6, size=rng.integers(0, 30))
            want = python_lcs(list(a), list(b))
            assert numpy_ref.lcs_length(a, b) == want
            if HAS_NUMBA:
                assert numba_impl.lcs_length(a, b) == want


@needs_numba
class TestBackendAgreement:
    """The numba build must match the numpy reference to round-off."""

    def test_attention_forward_backward(self):
        rng = np.random.default_rng(11)
        for _ in range(8):
            b, h = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            tq, tk = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            d = int(rng.integers(1, 9))
            q = rng.normal(size=(b, h, tq, d))
            k = rng.normal(size=(b, h, tk, d))
            v = rng.normal(size=(b, h, tk, d))
            bias = np.where(rng.random((tq, tk)) < 0.2, -1e30, 0.0)
            bias[:, 0] = 0.0  # keep at least one unmasked key per row
            scale = d**-0.5
            o1, p1 = numpy_ref.attention_forward(q, k, v, bias, scale)
            o2, p2 = numba_impl.attention_forward(q, k, v, bias, scale)
            np.testing.assert_allclose(o1, o2, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(p1, p2, rtol=1e-12, atol=1e-12)
            dout = rng.normal(size=o1.shape)
            g1 = numpy_ref.attention_backward(dout, q, k, v, p1, scale)
            g2 = numba_impl.attention_backward(dout, q, k, v, p2, scale)
            for a, b_ in zip(g1, g2):
                np.testing.assert_allclose(a, b_, rtol=1e-11, atol=1e-12)

    def test_layer_norm_forward_backward(self):
        rng = np.random.default_rng(12)
        for _ in range(8):
            r, d = int(rng.integers(1, 20)), int(rng.integers(2, 33))
            x = rng.normal(size=(r, d)) * rng.uniform(0.1, 5)
            gamma = rng.uniform(0.5, 1.5, d)
            beta = rng.normal(size=d)
            y1, m1, s1 = numpy_ref.layer_norm_forward(x, gamma, beta, 1e-5)
            y2, m2, s2 = numba_impl.layer_norm_forward(x, gamma, beta, 1e-5)
            np.testing.assert_allclose(y1, y2, rtol=1e-12, atol=1e-12)
            dy = rng.normal(size=(r, d))
            g1 = numpy_ref.layer_norm_backward(dy, x, gamma, m1, s1)
            g2 = numba_impl.layer_norm_backward(dy, x, gamma, m2, s2)
            for a, b_ in zip(g1, g2):
                np.testing.assert_allclose(a, b_, rtol=1e-11, atol=1e-12)

    def test_adamw_agreement(self):
        rng = np.random.default_rng(13)
        p1 = rng.normal(size=257)
        p2 = p1.copy()
        m1, v1 = np.zeros(257), np.zeros(257)
        m2, v2 = np.zeros(257), np.zeros(257)
        for step in range(1, 6):
            g = rng.normal(size=257)
            numpy_ref.adamw_update(p1, g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, 0.01, step)
            numba_impl.adamw_update(p2, g.copy(), m2, v2, 1e-3, 0.9, 0.999, 1e-8, 0.01, step)
        np.testing.assert_allclose(p1, p2, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(m1, m2, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(v1, v2, rtol=1e-12, atol=1e-14)


class TestDispatch:
    def test_env_flag_selects_backend(self):
        import os
        import subprocess
        import sys

        code = "from crossview import kernels; print(kernels.backend_name())"
        flags = [("numpy", "numpy")] + ([("numba", "numba")] if HAS_NUMBA else [])
        for flag, want in flags:
            out = subprocess.run(
                [sys.executable, "-c", code],
                capture_output=True,
                text=True,
                env={**os.environ, "CROSSVIEW_KERNELS": flag},
            )
            assert out.returncode == 0, out.stderr
            assert out.stdout.strip() == want

    def test_invalid_flag_rejected(self):
        import os
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c", "import crossview.kernels"],
            capture_output=True,
            text=True,
            env={**os.environ, "CROSSVIEW_KERNELS": "gpu"},
        )
        assert out.returncode != 0
        assert "CROSSVIEW_KERNELS" in out.stderr
