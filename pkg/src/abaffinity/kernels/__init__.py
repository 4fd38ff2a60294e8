"""Convolution kernel dispatch: compiled extension with numpy fallback.

The compiled module is preferred when it imported cleanly and the
per-position work is small (tight loops beat BLAS dispatch overhead
there; see benchmarks/bench_conv.py). Large convolutions route to the
numpy im2col formulation, which hands the contraction to BLAS. Set
ABAFFINITY_FORCE_FALLBACK=1 to pin the numpy implementation.

Routing depends only on kernel/channel sizes, never on sequence length,
so padding or permuting a sequence cannot change the backend.
"""

import os

import numpy as np

from . import fallback

_ext = None
if os.environ.get("ABAFFINITY_FORCE_FALLBACK") != "1":
    try:
        from . import _convkernels as _ext
    except ImportError:
        _ext = None

# crossover measured by benchmarks/bench_conv.py: K * C_in * C_out above
# which the BLAS path wins
_COMPILED_MAX_WORK = 2048


def backend() -> str:
    """Name of the available kernel backend: 'compiled' or 'numpy'."""
    return "compiled" if _ext is not None else "numpy"


def _use_ext(w: np.ndarray) -> bool:
    return _ext is not None and w.size <= _COMPILED_MAX_WORK


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if _use_ext(w):
        return _ext.conv1d_forward(
            np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(b)
        )
    return fallback.conv1d_forward(x, w, b)


def conv1d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray):
    if _use_ext(w):
        return _ext.conv1d_backward(
            np.ascontiguousarray(x),
            np.ascontiguousarray(w),
            np.ascontiguousarray(grad_out),
        )
    return fallback.conv1d_backward(x, w, grad_out)
