"""Numpy fallback for the compiled kernels in ``_ckernels.pyx``.

Same signatures and semantics; inputs are pre-padded and C-contiguous.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def conv2d_direct(xp, w, stride):
    N, Hp, Wp, Ci = xp.shape
    K, Co = w.shape[0], w.shape[3]
    Ho = (Hp - K) // stride + 1
    Wo = (Wp - K) // stride + 1
    out = np.zeros((N, Ho, Wo, Co), dtype=np.float64)
    macs = 0
    for u in range(K):
        for v in range(K):
            patch = xp[:, u:u + stride * (Ho - 1) + 1:stride, v:v + stride * (Wo - 1) + 1:stride, :]
            out += np.einsum("nhwc,co->nhwo", patch, w[u, v])
            macs += N * Ho * Wo * Ci * Co
    return out, macs


def im2col(xp, K, stride):
    N, Hp, Wp, Ci = xp.shape
    Ho = (Hp - K) // stride + 1
    Wo = (Wp - K) // stride + 1
    # (N, Ho', Wo', Ci, K, K) before striding
    win = sliding_window_view(xp, (K, K), axis=(1, 2))[:, ::stride, ::stride]
    win = win[:, :Ho, :Wo].transpose(0, 1, 2, 4, 5, 3)
    return np.ascontiguousarray(win).reshape(N * Ho * Wo, K * K * Ci)


def col2im(cols, N, Hp, Wp, Ci, K, stride):
    Ho = (Hp - K) // stride + 1
    Wo = (Wp - K) // stride + 1
    out = np.zeros((N, Hp, Wp, Ci), dtype=cols.dtype)
    patches = cols.reshape(N, Ho, Wo, K, K, Ci)
    for u in range(K):
        for v in range(K):
            out[:, u:u + stride * (Ho - 1) + 1:stride, v:v + stride * (Wo - 1) + 1:stride, :] += patches[:, :, :, u, v, :]
    return out
