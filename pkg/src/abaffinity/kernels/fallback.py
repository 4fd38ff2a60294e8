"""Pure-numpy convolution kernels (im2col formulation).

Reference implementation for the compiled extension; also the fallback
selected at import when the extension is unavailable.
"""

import numpy as np


def conv1d_forward(x, w, b):
    """Length-preserving zero-padded cross-correlation, stride 1.

    x: (L, C_in), w: (K, C_in, C_out) with K odd, b: (C_out,).
    Returns (L, C_out): out[j, o] = b[o] + sum_{i,d} w[i,d,o] * x[j+i-K//2, d].
    """
    length, c_in = x.shape
    k = w.shape[0]
    pad = k // 2
    xp = np.zeros((length + 2 * pad, c_in), dtype=x.dtype)
    xp[pad:pad + length] = x
    # cols[j, d, i] = xp[j + i, d]
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)
    out = np.tensordot(cols, w, axes=([1, 2], [1, 0]))
    out += b
    return out


def conv1d_backward(x, w, grad_out):
    """Gradients of conv1d_forward w.r.t. x, w and b.

    grad_out: (L, C_out). Returns (dx, dw, db) with the input shapes.
    """
    length, c_in = x.shape
    k = w.shape[0]
    pad = k // 2
    xp = np.zeros((length + 2 * pad, c_in), dtype=x.dtype)
    xp[pad:pad + length] = x
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)

    db = grad_out.sum(axis=0)
    # dw[i, d, o] = sum_j grad_out[j, o] * xp[j+i, d]
    dw = np.tensordot(cols, grad_out, axes=([0], [0])).transpose(1, 0, 2)
    # dxp[j+i, d] += grad_out[j, o] * w[i, d, o]
    contrib = np.tensordot(grad_out, w, axes=([1], [2]))  # (j, i, d)
    dxp = np.zeros_like(xp)
    for i in range(k):
        dxp[i:i + length] += contrib[:, i, :]
    dx = dxp[pad:pad + length]
    return dx, dw, db
