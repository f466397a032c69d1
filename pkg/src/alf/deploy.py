"""Compaction of trained models and the ALF1 binary container.

Container layout (all integers little-endian)::

    b"ALF1" | version u32 | layer count u32
    per layer:
        kind u8 | K u32 | Ci u32 | C_code_eff u32 | Co u32 | stride u32 | padding u32
        sigma_inter u8 | sigma u8
        u64 count | count x f32   (W_code_compact, row-major K x K x Ci x C_code_eff)
        u64 count | count x f32   (W_exp_compact,  row-major 1 x 1 x C_code_eff x Co)
    CRC32 u32 of every preceding byte

Non-ALF layers reuse the same record: a standard conv stores its filter bank
in the first payload and an optional bias in the second; a linear layer stores
its ``Ci x Co`` matrix as ``1 x 1 x Ci x Co`` and its bias as the second payload;
pooling layers carry empty payloads.
"""
from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tape
from .block import ALFBlock, encode_filters
from .cost import LayerShape, code_max, layer_cost
from .errors import FormatError, ShapeError
from .model import ConvLayer, Dense, Flatten, GlobalAvgPool
from .tensor import ConvGeometry

log = logging.getLogger(__name__)

MAGIC = b"ALF1"
FORMAT_VERSION = 1

KIND_CONV, KIND_ALF, KIND_LINEAR, KIND_GAP, KIND_FLATTEN = range(5)
KIND_NAMES = {KIND_CONV: "conv", KIND_ALF: "alf", KIND_LINEAR: "linear",
              KIND_GAP: "gap", KIND_FLATTEN: "flatten"}
ACT_CODES = {"identity": 0, "relu": 1}
ACT_NAMES = {v: k for k, v in ACT_CODES.items()}

_HEADER = struct.Struct("<4sII")
_LAYER = struct.Struct("<BIIIIIIBB")
_COUNT = struct.Struct("<Q")
_CRC = struct.Struct("<I")


@dataclass
class DeployedLayer:
    kind: int
    k: int = 1
    ci: int = 0
    c_code: int = 0
    co: int = 0
    stride: int = 1
    padding: int = 0
    sigma_inter: str = "identity"
    sigma: str = "identity"
    w_code: np.ndarray = None
    w_exp: np.ndarray = None

    def __post_init__(self):
        if self.w_code is None:
            self.w_code = np.zeros((0,), dtype=np.float32)
        if self.w_exp is None:
            self.w_exp = np.zeros((0,), dtype=np.float32)
        self.w_code = np.ascontiguousarray(self.w_code, dtype="<f4")
        self.w_exp = np.ascontiguousarray(self.w_exp, dtype="<f4")

    @property
    def geom(self):
        return ConvGeometry(self.k, self.stride, self.padding)

    @property
    def uneconomical(self):
        return self.kind == KIND_ALF and self.c_code >= code_max(self.ci, self.co, self.k)

    def forward(self, tape, h):
        if self.kind == KIND_CONV:
            h = tape.conv2d(h, tape.leaf(self.w_code), self.geom)
            if self.w_exp.size:
                h = tape.add(h, tape.leaf(self.w_exp))
            return tape.activation(h, self.sigma)
        if self.kind == KIND_ALF:
            h = tape.activation(tape.conv2d(h, tape.leaf(self.w_code), self.geom), self.sigma_inter)
            return tape.activation(tape.pointwise_conv(h, tape.leaf(self.w_exp)), self.sigma)
        if self.kind == KIND_LINEAR:
            return tape.linear(h, tape.leaf(self.w_code[0, 0]), tape.leaf(self.w_exp))
        if self.kind == KIND_GAP:
            return tape.global_avg_pool(h)
        if self.kind == KIND_FLATTEN:
            return tape.flatten(h)
        raise FormatError(f"unknown layer kind {self.kind}")


@dataclass
class DeployedModel:
    layers: list
    version: int = FORMAT_VERSION

    @property
    def num_classes(self):
        return self.layers[-1].co

    @property
    def input_channels(self):
        return self.layers[0].ci

    def forward(self, x):
        tape = Tape()
        h = tape.leaf(x)
        for layer in self.layers:
            h = layer.forward(tape, h)
        return h.value

    def predict(self, x, batch_size=512):
        outs = [self.forward(x[s:s + batch_size]) for s in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0, self.num_classes), np.float32)

    def cost_report_layers(self, input_hw):
        """Cost entries for the conv-like layers given the input spatial size."""
        h, w = input_hw
        entries = []
        for i, layer in enumerate(self.layers):
            if layer.kind in (KIND_CONV, KIND_ALF):
                h, w = layer.geom.output_hw(h, w)
                kind = "alf" if layer.kind == KIND_ALF else "conv"
                shape = LayerShape(layer.ci, layer.co, layer.k, h, w, name=f"layer{i}", kind=kind)
                entries.append(layer_cost(shape, layer.c_code if kind == "alf" else None))
        return entries


def compact(block: ALFBlock) -> DeployedLayer:
    """Drop masked code channels, the encoder and the reference bank."""
    keep = np.flatnonzero(block.mask)
    assert keep.size > 0, "all-zero mask cannot be deployed"
    w_code = encode_filters(block)[..., keep]
    w_exp = block.W_exp[:, :, keep, :]
    g = block.geom
    layer = DeployedLayer(KIND_ALF, g.kernel, block.ci, int(keep.size), block.co, g.stride,
                          g.padding, block.sigma_inter, block.sigma, w_code, w_exp)
    if layer.uneconomical:
        log.warning("deployed ALF layer keeps %d code channels, not below break-even %d",
                    layer.c_code, code_max(layer.ci, layer.co, layer.k))
    return layer


def deploy(model) -> DeployedModel:
    layers = []
    for layer in model.layers:
        if isinstance(layer, ALFBlock):
            layers.append(compact(layer))
        elif isinstance(layer, ConvLayer):
            K, _, Ci, Co = layer.W.shape
            g = layer.geom
            layers.append(DeployedLayer(KIND_CONV, K, Ci, Co, Co, g.stride, g.padding,
                                        "identity", layer.activation, layer.W, layer.b))
        elif isinstance(layer, Dense):
            fi, fo = layer.W.shape
            layers.append(DeployedLayer(KIND_LINEAR, 1, fi, fi, fo, w_code=layer.W.reshape(1, 1, fi, fo),
                                        w_exp=layer.b))
        elif isinstance(layer, GlobalAvgPool):
            layers.append(DeployedLayer(KIND_GAP))
        elif isinstance(layer, Flatten):
            layers.append(DeployedLayer(KIND_FLATTEN))
        else:
            raise TypeError(f"cannot deploy layer {layer!r}")
    return DeployedModel(layers)


def _expected_shapes(kind, k, ci, c_code, co):
    if kind == KIND_ALF:
        return [(k, k, ci, c_code), (1, 1, c_code, co)]
    if kind == KIND_CONV:
        return [(k, k, ci, co), (co,), (0,)]
    if kind == KIND_LINEAR:
        return [(1, 1, ci, co), (co,)]
    return [(0,), (0,)]


def to_bytes(model: DeployedModel) -> bytes:
    out = bytearray(_HEADER.pack(MAGIC, model.version, len(model.layers)))
    for layer in model.layers:
        out += _LAYER.pack(layer.kind, layer.k, layer.ci, layer.c_code, layer.co, layer.stride,
                           layer.padding, ACT_CODES[layer.sigma_inter], ACT_CODES[layer.sigma])
        for payload in (layer.w_code, layer.w_exp):
            out += _COUNT.pack(payload.size)
            out += payload.astype("<f4").tobytes()
    out += _CRC.pack(zlib.crc32(out))
    return bytes(out)


def export(model: DeployedModel, path=None) -> bytes:
    """Serialize ``model``; also writes the bytes to ``path`` when given."""
    data = to_bytes(model)
    if path is not None:
        Path(path).write_bytes(data)
    return data


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated container: need {n} bytes for {what}, "
                              f"{len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return fmt.unpack(self.take(fmt.size, what))


def import_model(data: bytes, reader_version=FORMAT_VERSION) -> DeployedModel:
    """Parse and validate an ALF1 container."""
    if isinstance(data, (str, Path)):
        data = Path(data).read_bytes()
    data = bytes(data)
    r = _Reader(data)
    magic, version, count = r.unpack(_HEADER, "header")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != reader_version:
        raise FormatError(f"unsupported format version {version} (reader supports {reader_version})", 4)
    layers = []
    for i in range(count):
        start = r.pos
        kind, k, ci, c_code, co, stride, padding, si, s = r.unpack(_LAYER, f"layer {i} header")
        if kind not in KIND_NAMES:
            raise FormatError(f"layer {i}: unknown kind {kind}", start)
        if si not in ACT_NAMES or s not in ACT_NAMES:
            raise FormatError(f"layer {i}: unknown activation code", start)
        payloads = []
        for name in ("W_code", "W_exp"):
            (n,) = r.unpack(_COUNT, f"layer {i} {name} count")
            at = r.pos
            raw = r.take(4 * n, f"layer {i} {name} payload")
            arr = np.frombuffer(raw, dtype="<f4").copy()
            if not np.all(np.isfinite(arr)):
                raise FormatError(f"layer {i}: non-finite values in {name}", at)
            payloads.append(arr)
        shapes = _expected_shapes(kind, k, ci, c_code, co)
        try:
            w_code = payloads[0].reshape(shapes[0]) if kind in (KIND_ALF, KIND_CONV, KIND_LINEAR) else payloads[0]
            if kind == KIND_ALF:
                w_exp = payloads[1].reshape(shapes[1])
            elif payloads[1].size not in (0, int(np.prod(shapes[1]))):
                raise ValueError
            else:
                w_exp = payloads[1]
            if kind in (KIND_GAP, KIND_FLATTEN) and payloads[0].size:
                raise ValueError
        except ValueError:
            raise FormatError(f"layer {i}: payload lengths {[p.size for p in payloads]} do not match "
                              f"dims K={k} Ci={ci} C_code={c_code} Co={co}", start) from None
        if kind in (KIND_ALF, KIND_CONV) and (k < 1 or stride < 1):
            raise FormatError(f"layer {i}: invalid geometry", start)
        layers.append(DeployedLayer(kind, k, ci, c_code, co, stride, padding,
                                    ACT_NAMES[si], ACT_NAMES[s], w_code, w_exp))
    body_end = r.pos
    (crc,) = r.unpack(_CRC, "CRC32")
    if crc != zlib.crc32(data[:body_end]):
        raise FormatError("CRC32 mismatch", body_end)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after CRC", r.pos)
    return DeployedModel(layers, version)
