"""Sequential CNN built from an architecture description."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Node, Tape
from .block import ALFBlock
from .config import ArchSpec
from .tensor import ConvGeometry


@dataclass
class ConvLayer:
    W: np.ndarray
    geom: ConvGeometry
    activation: str = "relu"
    b: np.ndarray = None

    def parameters(self):
        params = {"W": self.W}
        if self.b is not None:
            params["b"] = self.b
        return params

    def tape_forward(self, tape, x, leaves):
        h = tape.conv2d(x, leaves["W"], self.geom)
        if "b" in leaves:
            h = tape.add(h, leaves["b"])
        return tape.activation(h, self.activation)


class GlobalAvgPool:
    def parameters(self):
        return {}

    def tape_forward(self, tape, x, leaves):
        return tape.global_avg_pool(x)


class Flatten:
    def parameters(self):
        return {}

    def tape_forward(self, tape, x, leaves):
        return tape.flatten(x)


@dataclass
class Dense:
    W: np.ndarray
    b: np.ndarray

    def parameters(self):
        return {"W": self.W, "b": self.b}

    def tape_forward(self, tape, x, leaves):
        return tape.linear(x, leaves["W"], leaves["b"])


class Model:
    def __init__(self, layers, input_dims=None):
        self.layers = list(layers)
        self.input_dims = input_dims

    @classmethod
    def from_arch(cls, arch: ArchSpec, rng=None):
        rng = np.random.default_rng(rng)
        arch.shapes()
        layers = []
        for spec in arch.layers:
            if spec.type == "conv":
                fan_in = spec.k * spec.k * spec.ci
                W = rng.normal(0.0, np.sqrt(2.0 / fan_in), (spec.k, spec.k, spec.ci, spec.co))
                b = np.zeros(spec.co, dtype=np.float32) if spec.bias else None
                layers.append(ConvLayer(W.astype(np.float32), spec.geom, spec.activation, b))
            elif spec.type == "alf":
                layers.append(ALFBlock.init(spec.ci, spec.co, spec.k, spec.stride, spec.padding,
                                            rng=rng, sigma_inter=spec.sigma_inter, sigma=spec.activation))
            elif spec.type == "gap":
                layers.append(GlobalAvgPool())
            elif spec.type == "flatten":
                layers.append(Flatten())
            elif spec.type == "linear":
                bound = 1.0 / np.sqrt(spec.in_features)
                W = rng.uniform(-bound, bound, (spec.in_features, spec.out_features))
                layers.append(Dense(W.astype(np.float32), np.zeros(spec.out_features, dtype=np.float32)))
        return cls(layers, tuple(arch.input_dims))

    def alf_blocks(self):
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, ALFBlock)]

    def named_parameters(self):
        """Live references to every trainable array, keyed ``layer{i}.{name}``."""
        return {f"layer{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.parameters().items()}

    def set_parameter(self, name, value):
        layer, attr = name.split(".", 1)
        setattr(self.layers[int(layer[5:])], attr, value)

    def tape_forward(self, tape: Tape, x, params=None):
        """Training-mode forward pass.

        Returns ``(logits, leaves, rec_losses)`` where ``rec_losses`` holds one
        reconstruction-loss node per ALF block.  ``params`` overrides the
        stored arrays; its values may be arrays or leaves already on ``tape``
        (used by gradient checks).
        """
        params = self.named_parameters() if params is None else params
        leaves = {name: v if isinstance(v, Node) else tape.param(v, name=name) for name, v in params.items()}
        h = x if hasattr(x, "op") else tape.leaf(x, name="input")
        rec = []
        for i, layer in enumerate(self.layers):
            prefix = f"layer{i}."
            local = {k[len(prefix):]: v for k, v in leaves.items() if k.startswith(prefix)}
            if isinstance(layer, ALFBlock):
                w_code = layer.tape_encode(tape, local)
                h = layer.tape_forward(tape, h, local, w_code)
                rec.append(layer.tape_reconstruction_loss(tape, local, w_code))
            else:
                h = layer.tape_forward(tape, h, local)
        return h, leaves, rec

    def predict(self, x, batch_size=512):
        """Logits in training mode (masked, not compacted)."""
        outs = []
        for start in range(0, len(x), batch_size):
            tape = Tape()
            logits, _, _ = self.tape_forward(tape, x[start:start + batch_size])
            outs.append(logits.value)
        if not outs:
            return np.zeros((0, 0), dtype=np.float32)
        return np.concatenate(outs)
