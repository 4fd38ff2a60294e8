"""Compiled-vs-fallback kernel parity."""

import numpy as np
import pytest

from abaffinity import kernels
from abaffinity.kernels import fallback

try:
    from abaffinity.kernels import _convkernels as ext
except ImportError:
    ext = None

needs_ext = pytest.mark.skipif(ext is None, reason="compiled kernels not built")


def _random_case(rng, length, c_in, c_out, k, dtype):
    x = rng.standard_normal((length, c_in)).astype(dtype)
    w = rng.standard_normal((k, c_in, c_out)).astype(dtype)
    b = rng.standard_normal(c_out).astype(dtype)
    g = rng.standard_normal((length, c_out)).astype(dtype)
    return x, w, b, g


@needs_ext
@pytest.mark.parametrize("dtype,atol", [(np.float32, 1e-4), (np.float64, 1e-12)])
@pytest.mark.parametrize("length,c_in,c_out,k", [
    (1, 1, 1, 1), (4, 1, 1, 3), (8, 3, 2, 5), (17, 5, 7, 3), (64, 8, 4, 7),
])
def test_forward_backward_parity(length, c_in, c_out, k, dtype, atol):
    rng = np.random.default_rng(length * 100 + k)
    x, w, b, g = _random_case(rng, length, c_in, c_out, k, dtype)

    out_e = ext.conv1d_forward(x, w, b)
    out_f = fallback.conv1d_forward(x, w, b)
    np.testing.assert_allclose(out_e, out_f, atol=atol)
    assert out_e.dtype == dtype

    for ge, gf in zip(ext.conv1d_backward(x, w, g),
                      fallback.conv1d_backward(x, w, g)):
        np.testing.assert_allclose(ge, gf, atol=atol)
        assert ge.dtype == dtype


def test_dispatch_reports_backend():
    assert kernels.backend() in {"compiled", "numpy"}


def test_dispatch_accepts_noncontiguous():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((12, 6))[::2]  # non-contiguous view
    w = rng.standard_normal((3, 3, 2))
    b = rng.standard_normal(2)
    out = kernels.conv1d_forward(x[:, :3], w, b)
    np.testing.assert_allclose(
        out, fallback.conv1d_forward(np.ascontiguousarray(x[:, :3]), w, b),
        atol=1e-12)
