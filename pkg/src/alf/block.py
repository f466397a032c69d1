"""The ALF block: a convolution whose filter bank is factorized into code
filters and a point-wise expansion, trained alongside a filter autoencoder.

Code filters are derived from the reference bank through the encoder ``E``::

    W_code[..., c] = mask[c] * sum_o W_ref[..., o] * E[o, c]

and the expansion weights double as the autoencoder's decoder.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import ACTIVATIONS, ConvGeometry, activation, conv2d_fast, pointwise_conv


@dataclass
class ALFBlock:
    W_ref: np.ndarray  # K x K x Ci x Co
    E: np.ndarray  # Co x C_code
    W_exp: np.ndarray  # 1 x 1 x C_code x Co
    geom: ConvGeometry
    mask: np.ndarray = None
    soft_scores: np.ndarray = None
    sigma_inter: str = "identity"
    sigma: str = "relu"

    def __post_init__(self):
        K, _, Ci, Co = self.W_ref.shape
        c_code = self.E.shape[1]
        if self.E.shape[0] != Co or not 1 <= c_code <= Co:
            raise ShapeError(f"encoder shape {self.E.shape} invalid for Co={Co}")
        if self.W_exp.shape != (1, 1, c_code, Co):
            raise ShapeError(f"expansion weights {self.W_exp.shape} != {(1, 1, c_code, Co)}")
        if K != self.geom.kernel or self.W_ref.shape[1] != K:
            raise ShapeError(f"filter bank {self.W_ref.shape} does not match kernel {self.geom.kernel}")
        if self.mask is None:
            self.mask = np.ones(c_code, dtype=np.float32)
        if self.soft_scores is None:
            self.soft_scores = np.zeros(c_code, dtype=np.float32)
        if self.mask.shape != (c_code,) or not np.all((self.mask == 0) | (self.mask == 1)):
            raise ShapeError("mask must be a 0/1 vector of length C_code")
        if not self.mask.any():
            raise ValueError("at least one mask entry must be 1")
        for kind in (self.sigma_inter, self.sigma):
            if kind not in ACTIVATIONS:
                raise ValueError(f"unknown activation {kind!r}")

    @classmethod
    def init(cls, ci, co, kernel, stride=1, padding=0, c_code=None, rng=None,
             sigma_inter="identity", sigma="relu"):
        """He-initialised reference bank; encoder starts near a truncated identity."""
        rng = np.random.default_rng(rng)
        c_code = co if c_code is None else c_code
        fan_in = kernel * kernel * ci
        W_ref = rng.normal(0.0, np.sqrt(2.0 / fan_in), (kernel, kernel, ci, co))
        E = np.eye(co, c_code) + rng.normal(0.0, 0.01, (co, c_code))
        W_exp = E.T.reshape(1, 1, c_code, co)
        return cls(
            W_ref.astype(np.float32), E.astype(np.float32), W_exp.astype(np.float32),
            ConvGeometry(kernel, stride, padding), sigma_inter=sigma_inter, sigma=sigma,
        )

    @property
    def ci(self):
        return self.W_ref.shape[2]

    @property
    def co(self):
        return self.W_ref.shape[3]

    @property
    def c_code(self):
        return self.E.shape[1]

    @property
    def active_channels(self):
        return int(self.mask.sum())

    def parameters(self):
        return {"W_ref": self.W_ref, "E": self.E, "W_exp": self.W_exp}

    # -- tape path (training) --

    def tape_leaves(self, tape, prefix=""):
        return {k: tape.param(v, name=prefix + k) for k, v in self.parameters().items()}

    def tape_encode(self, tape, leaves):
        code = tape.channel_matmul(leaves["W_ref"], leaves["E"])
        return tape.mul_const(code, self.mask)

    def tape_forward(self, tape, x, leaves, w_code=None):
        w_code = self.tape_encode(tape, leaves) if w_code is None else w_code
        h = tape.activation(tape.conv2d(x, w_code, self.geom), self.sigma_inter)
        return tape.activation(tape.pointwise_conv(h, leaves["W_exp"]), self.sigma)

    def tape_reconstruction_loss(self, tape, leaves, w_code=None):
        w_code = self.tape_encode(tape, leaves) if w_code is None else w_code
        return tape.mse(leaves["W_ref"], tape.channel_matmul(w_code, leaves["W_exp"]))


def encode_filters(block: ALFBlock, masked=True) -> np.ndarray:
    # same arithmetic as the training tape, so compaction is bit-faithful
    w = block.W_ref @ block.E
    if masked:
        w = w * block.mask.astype(w.dtype)
    return w


def decode_filters(w_code, w_exp) -> np.ndarray:
    w_code = np.asarray(w_code)
    w_exp = np.asarray(w_exp)
    if w_exp.ndim != 4 or w_exp.shape[:2] != (1, 1) or w_code.shape[-1] != w_exp.shape[2]:
        raise ShapeError(f"cannot decode {w_code.shape} with expansion {w_exp.shape}")
    out = w_code.astype(np.float64) @ w_exp[0, 0].astype(np.float64)
    return out.astype(np.result_type(w_code, w_exp))


def alf_forward(block: ALFBlock, a_prev) -> np.ndarray:
    h = activation(conv2d_fast(a_prev, encode_filters(block), block.geom), block.sigma_inter)
    return activation(pointwise_conv(h, block.W_exp), block.sigma)


def reconstruction_loss(block: ALFBlock) -> float:
    rec = decode_filters(encode_filters(block), block.W_exp).astype(np.float64)
    diff = block.W_ref.astype(np.float64) - rec
    return float(np.mean(diff * diff))
