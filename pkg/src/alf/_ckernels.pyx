# cython: language_level=3
"""Compiled convolution kernels.

All functions take inputs that are already zero-padded, NHWC for activations
and KKIO for weights, C-contiguous.  Padding and dtype policy live in
:mod:`alf.kernels`.
"""
import numpy as np

cimport numpy as cnp
from cython cimport floating

cnp.import_array()

BACKEND = "cython"


def conv2d_direct(const double[:, :, :, ::1] xp, const double[:, :, :, ::1] w, int stride):
    """Direct sextuple-loop convolution with 64-bit accumulation.

    Returns ``(out, macs)`` where ``macs`` is the number of multiply-accumulates
    actually executed.
    """
    cdef Py_ssize_t N = xp.shape[0], Hp = xp.shape[1], Wp = xp.shape[2], Ci = xp.shape[3]
    cdef Py_ssize_t K = w.shape[0], Co = w.shape[3]
    cdef Py_ssize_t Ho = (Hp - K) // stride + 1
    cdef Py_ssize_t Wo = (Wp - K) // stride + 1
    out_arr = np.zeros((N, Ho, Wo, Co), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, y, x, u, v, c, o, iy, ix
    cdef double a
    cdef long long macs = 0
    for n in range(N):
        for y in range(Ho):
            for x in range(Wo):
                for u in range(K):
                    iy = y * stride + u
                    for v in range(K):
                        ix = x * stride + v
                        for c in range(Ci):
                            a = xp[n, iy, ix, c]
                            for o in range(Co):
                                out[n, y, x, o] += a * w[u, v, c, o]
                                macs += 1
    return out_arr, macs


def im2col(floating[:, :, :, ::1] xp, int K, int stride):
    """Gather KxK patches into rows ordered (n, y, x) with columns (u, v, c)."""
    cdef Py_ssize_t N = xp.shape[0], Hp = xp.shape[1], Wp = xp.shape[2], Ci = xp.shape[3]
    cdef Py_ssize_t Ho = (Hp - K) // stride + 1
    cdef Py_ssize_t Wo = (Wp - K) // stride + 1
    dtype = np.float64 if floating is double else np.float32
    cols_arr = np.empty((N * Ho * Wo, K * K * Ci), dtype=dtype)
    cdef floating[:, ::1] cols = cols_arr
    cdef Py_ssize_t n, y, x, u, v, c, row, col
    for n in range(N):
        for y in range(Ho):
            for x in range(Wo):
                row = (n * Ho + y) * Wo + x
                col = 0
                for u in range(K):
                    for v in range(K):
                        for c in range(Ci):
                            cols[row, col] = xp[n, y * stride + u, x * stride + v, c]
                            col += 1
    return cols_arr


def col2im(floating[:, ::1] cols, Py_ssize_t N, Py_ssize_t Hp, Py_ssize_t Wp,
           Py_ssize_t Ci, int K, int stride):
    """Scatter-add the rows of ``cols`` back onto a padded NHWC canvas."""
    cdef Py_ssize_t Ho = (Hp - K) // stride + 1
    cdef Py_ssize_t Wo = (Wp - K) // stride + 1
    dtype = np.float64 if floating is double else np.float32
    out_arr = np.zeros((N, Hp, Wp, Ci), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, y, x, u, v, c, row, col
    for n in range(N):
        for y in range(Ho):
            for x in range(Wo):
                row = (n * Ho + y) * Wo + x
                col = 0
                for u in range(K):
                    for v in range(K):
                        for c in range(Ci):
                            out[n, y * stride + u, x * stride + v, c] += cols[row, col]
                            col += 1
    return out_arr
