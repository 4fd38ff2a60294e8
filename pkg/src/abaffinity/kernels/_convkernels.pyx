# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels (hot loops of the CNN branch)."""

import numpy as np

cimport cython


ctypedef fused floating:
    float
    double


def conv1d_forward(floating[:, ::1] x, floating[:, :, ::1] w, floating[::1] b):
    cdef Py_ssize_t length = x.shape[0]
    cdef Py_ssize_t c_in = x.shape[1]
    cdef Py_ssize_t k = w.shape[0]
    cdef Py_ssize_t c_out = w.shape[2]
    cdef Py_ssize_t pad = k // 2
    cdef Py_ssize_t j, i, d, o, t
    cdef floating xv

    if floating is float:
        out_np = np.empty((length, c_out), dtype=np.float32)
    else:
        out_np = np.empty((length, c_out), dtype=np.float64)
    cdef floating[:, ::1] out = out_np

    for j in range(length):
        for o in range(c_out):
            out[j, o] = b[o]
        for i in range(k):
            t = j + i - pad
            if t < 0 or t >= length:
                continue
            for d in range(c_in):
                xv = x[t, d]
                for o in range(c_out):
                    out[j, o] += w[i, d, o] * xv
    return out_np


def conv1d_backward(floating[:, ::1] x, floating[:, :, ::1] w,
                    floating[:, ::1] grad_out):
    cdef Py_ssize_t length = x.shape[0]
    cdef Py_ssize_t c_in = x.shape[1]
    cdef Py_ssize_t k = w.shape[0]
    cdef Py_ssize_t c_out = w.shape[2]
    cdef Py_ssize_t pad = k // 2
    cdef Py_ssize_t j, i, d, o, t
    cdef floating g, acc

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_np = np.zeros((length, c_in), dtype=dtype)
    dw_np = np.zeros((k, c_in, c_out), dtype=dtype)
    db_np = np.zeros(c_out, dtype=dtype)
    cdef floating[:, ::1] dx = dx_np
    cdef floating[:, :, ::1] dw = dw_np
    cdef floating[::1] db = db_np

    for j in range(length):
        for o in range(c_out):
            db[o] += grad_out[j, o]
        for i in range(k):
            t = j + i - pad
            if t < 0 or t >= length:
                continue
            for d in range(c_in):
                acc = 0
                for o in range(c_out):
                    g = grad_out[j, o]
                    dw[i, d, o] += g * x[t, d]
                    acc += g * w[i, d, o]
                dx[t, d] += acc
    return dx_np, dw_np, db_np
