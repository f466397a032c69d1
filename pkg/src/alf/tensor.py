"""Rank-4 tensors and the convolution primitives.

Activations are NHWC, weights are KKIO (``K x K x Ci x Co``).  Functions take
and return plain ``numpy.ndarray``; :class:`Tensor4` is the validating wrapper
used where data crosses a boundary (loaders, containers).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError

NHWC = "NHWC"
KKIO = "KKIO"
ACTIVATIONS = ("identity", "relu")


@dataclass(frozen=True)
class ConvGeometry:
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ShapeError(f"invalid convolution geometry {self}")

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        """Output spatial size; raises unless the stride divides exactly."""
        out = []
        for size in (h, w):
            span = size + 2 * self.padding - self.kernel
            if span < 0 or span % self.stride:
                raise ShapeError(
                    f"geometry {self} does not tile input extent {size} exactly"
                )
            out.append(span // self.stride + 1)
        return out[0], out[1]


@dataclass(frozen=True)
class Tensor4:
    """Dense float32 rank-4 array with a layout tag."""

    data: np.ndarray
    layout: str = NHWC
    dims: tuple = field(init=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"Tensor4 needs 4 dims, got shape {arr.shape}")
        if self.layout not in (NHWC, KKIO):
            raise ValueError(f"unknown layout {self.layout!r}")
        check_finite(arr, "Tensor4")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "dims", tuple(int(d) for d in arr.shape))

    @classmethod
    def from_flat(cls, dims, values, layout=NHWC):
        values = np.asarray(values, dtype=np.float32)
        if values.size != int(np.prod(dims)):
            raise ShapeError(f"{values.size} values cannot fill dims {tuple(dims)}")
        return cls(values.reshape(dims), layout)

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)


def check_finite(arr, what="tensor"):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def _float_dtype(*arrays):
    return np.result_type(np.float32, *[a.dtype for a in arrays])


def _check_conv_shapes(x, w, geom):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and weights, got {x.shape}, {w.shape}")
    if w.shape[0] != geom.kernel or w.shape[1] != geom.kernel:
        raise ShapeError(f"weights {w.shape} do not match kernel size {geom.kernel}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(f"input has {x.shape[3]} channels, weights expect {w.shape[2]}")
    return geom.output_hw(x.shape[1], x.shape[2])


def pad_nhwc(x, padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    p = padding
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


class MacCounter:
    """Accumulates multiply-accumulates executed by :func:`conv2d_naive`."""

    def __init__(self):
        self.macs = 0

    def __repr__(self):
        return f"MacCounter(macs={self.macs})"


def conv2d_naive(x, w, geom: ConvGeometry, counter: MacCounter | None = None, backend=None):
    """Reference convolution: explicit loop over the padded input, 64-bit sums.

    This is the ground truth every other convolution path is tested against.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    Ho, Wo = _check_conv_shapes(x, w, geom)
    dtype = _float_dtype(x, w)
    N, Co = x.shape[0], w.shape[3]
    if N == 0:
        return np.zeros((0, Ho, Wo, Co), dtype=dtype)
    be = backend or kernels.backend
    xp = pad_nhwc(x.astype(np.float64), geom.padding)
    out, macs = be.conv2d_direct(xp, np.ascontiguousarray(w, dtype=np.float64), geom.stride)
    if counter is not None:
        counter.macs += int(macs)
    return check_finite(out.astype(dtype, copy=False), "conv2d_naive output")


def im2col(x, geom: ConvGeometry, backend=None):
    be = backend or kernels.backend
    xp = pad_nhwc(x, geom.padding)
    return be.im2col(xp, geom.kernel, geom.stride)


def col2im(cols, x_shape, geom: ConvGeometry, backend=None):
    """Adjoint of :func:`im2col`; returns an unpadded NHWC array."""
    be = backend or kernels.backend
    N, H, W, Ci = x_shape
    p = geom.padding
    out = be.col2im(np.ascontiguousarray(cols), N, H + 2 * p, W + 2 * p, Ci, geom.kernel, geom.stride)
    if p:
        out = out[:, p:p + H, p:p + W, :]
    return np.ascontiguousarray(out)


def conv2d_fast(x, w, geom: ConvGeometry, backend=None):
    """im2col + GEMM convolution.

    The GEMM runs in float64 so results agree with :func:`conv2d_naive` to the
    rounding of the output dtype.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    Ho, Wo = _check_conv_shapes(x, w, geom)
    dtype = _float_dtype(x, w)
    N, K, Ci, Co = x.shape[0], geom.kernel, w.shape[2], w.shape[3]
    if N == 0:
        return np.zeros((0, Ho, Wo, Co), dtype=dtype)
    cols = im2col(np.ascontiguousarray(x, dtype=np.float64), geom, backend)
    out = cols @ w.reshape(K * K * Ci, Co).astype(np.float64)
    return check_finite(out.reshape(N, Ho, Wo, Co).astype(dtype), "conv2d_fast output")


conv2d = conv2d_fast


def pointwise_conv(x, w):
    """1x1 convolution: a per-pixel matrix product over channels."""
    x = np.asarray(x)
    w = np.asarray(w)
    if w.ndim != 4 or w.shape[:2] != (1, 1):
        raise ShapeError(f"point-wise weights must be 1x1xCcxCo, got {w.shape}")
    if x.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"input channels {x.shape[-1]} do not match weights {w.shape}")
    dtype = _float_dtype(x, w)
    out = x.astype(np.float64) @ w[0, 0].astype(np.float64)
    return check_finite(out.astype(dtype), "pointwise_conv output")


def activation(x, kind: str):
    if kind == "identity":
        return x
    if kind == "relu":
        return np.maximum(x, 0)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
