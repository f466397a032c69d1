"""Run configuration: architecture description, training knobs, dataset.

Configs are YAML documents; see ``docs/config.md`` for the grammar.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .cost import LayerShape
from .errors import ConfigError, ShapeError
from .factorizer import DEFAULT_M, DEFAULT_PR, pruned_count
from .tensor import ACTIVATIONS, ConvGeometry

LAYER_TYPES = ("conv", "alf", "gap", "flatten", "linear")


@dataclass
class LayerSpec:
    type: str
    ci: int = 0
    co: int = 0
    k: int = 1
    stride: int = 1
    padding: int = 0
    activation: str = "relu"
    sigma_inter: str = "identity"
    bias: bool = False
    in_features: int = 0
    out_features: int = 0

    @property
    def geom(self):
        return ConvGeometry(self.k, self.stride, self.padding)


@dataclass
class ArchSpec:
    input_dims: tuple  # (H, W, C)
    layers: list

    def shapes(self):
        """Per-layer output shape (without batch); validates the channel chain."""
        shape = tuple(self.input_dims)
        out = []
        for i, layer in enumerate(self.layers):
            where = f"layer {i} ({layer.type})"
            if layer.type in ("conv", "alf"):
                if len(shape) != 3:
                    raise ConfigError(f"{where}: convolution after a flattening layer")
                if layer.ci != shape[2]:
                    raise ConfigError(f"{where}: ci={layer.ci} but incoming channels are {shape[2]}")
                try:
                    ho, wo = layer.geom.output_hw(shape[0], shape[1])
                except ShapeError as exc:
                    raise ConfigError(f"{where}: {exc}") from exc
                shape = (ho, wo, layer.co)
            elif layer.type == "gap":
                shape = (shape[-1],)
            elif layer.type == "flatten":
                n = 1
                for d in shape:
                    n *= d
                shape = (n,)
            elif layer.type == "linear":
                if len(shape) != 1:
                    raise ConfigError(f"{where}: linear layer needs a gap or flatten layer before it")
                if layer.in_features != shape[0]:
                    raise ConfigError(f"{where}: in={layer.in_features} but incoming features are {shape[0]}")
                shape = (layer.out_features,)
            out.append(shape)
        return out

    def cost_shapes(self):
        result = []
        shapes = self.shapes()
        for i, (layer, shape) in enumerate(zip(self.layers, shapes)):
            if layer.type in ("conv", "alf"):
                result.append(LayerShape(layer.ci, layer.co, layer.k, shape[0], shape[1],
                                         name=f"layer{i}", kind=layer.type))
        return result

    @property
    def num_classes(self):
        return self.shapes()[-1][0]


@dataclass
class TrainingConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    optimizer: str = "sgd+momentum"
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_decay: float = 0.1
    lr_decay_epochs: int = 0  # 0 disables step decay
    lambda_rec: float = 1.0
    m: int = DEFAULT_M
    pr: float = DEFAULT_PR
    seed: int = 0
    clip: float = 0.0  # 0 disables gradient clipping

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.optimizer not in ("sgd", "sgd+momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lambda_rec < 0:
            raise ConfigError("lambda_rec must be non-negative")
        if self.m < 1 or not 0 <= self.pr < 1:
            raise ConfigError("need m >= 1 and 0 <= pr < 1")


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    path: str = ""
    n: int = 6000
    rank: int = 4
    classes: int = 4
    width: int = 16
    test_fraction: float = 0.2
    margin_quantile: float = 0.0
    seed: int | None = None


@dataclass
class RunConfig:
    arch: ArchSpec
    training: TrainingConfig = field(default_factory=TrainingConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    out_dir: str = "out"

    def validate(self):
        self.training.validate()
        self.arch.shapes()
        if self.dataset.kind not in ("synthetic", "cifar10"):
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        return self

    def alf_code_widths(self):
        """Code channels expected to survive the mask schedule, per ALF layer."""
        return {
            s.name: s.co - pruned_count(self.training.pr, s.co)
            for s in self.arch.cost_shapes() if s.kind == "alf"
        }

    def to_dict(self):
        return {
            "input": list(self.arch.input_dims),
            "layers": [_layer_to_dict(l) for l in self.arch.layers],
            "training": asdict(self.training),
            "dataset": asdict(self.dataset),
            "out_dir": self.out_dir,
        }


def _layer_to_dict(layer: LayerSpec):
    d = {"type": layer.type}
    if layer.type in ("conv", "alf"):
        d.update(ci=layer.ci, co=layer.co, k=layer.k, stride=layer.stride,
                 padding=layer.padding, activation=layer.activation)
        if layer.type == "alf":
            d["sigma_inter"] = layer.sigma_inter
        if layer.bias:
            d["bias"] = True
    elif layer.type == "linear":
        d.update({"in": layer.in_features, "out": layer.out_features})
    return d


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**data)


def parse_layer(data, i):
    if not isinstance(data, dict) or "type" not in data:
        raise ConfigError(f"layer {i} must be a mapping with a 'type' key")
    data = dict(data)
    if data["type"] not in LAYER_TYPES:
        raise ConfigError(f"layer {i}: unknown type {data['type']!r}")
    if "in" in data:
        data["in_features"] = data.pop("in")
    if "out" in data:
        data["out_features"] = data.pop("out")
    layer = _build(LayerSpec, data, f"layer {i}")
    for kind in (layer.activation, layer.sigma_inter):
        if kind not in ACTIVATIONS:
            raise ConfigError(f"layer {i}: unknown activation {kind!r}")
    if layer.type in ("conv", "alf"):
        if min(layer.ci, layer.co, layer.k, layer.stride) < 1 or layer.padding < 0:
            raise ConfigError(f"layer {i}: ci, co, k, stride must be positive")
    if layer.type == "linear" and min(layer.in_features, layer.out_features) < 1:
        raise ConfigError(f"layer {i}: linear needs positive 'in' and 'out'")
    return layer


def parse_config(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    known = {"input", "layers", "training", "dataset", "out_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "layers" not in data or not data["layers"]:
        raise ConfigError("config needs a non-empty 'layers' list")
    input_dims = data.get("input")
    if not (isinstance(input_dims, (list, tuple)) and len(input_dims) == 3):
        raise ConfigError("'input' must be [H, W, C]")
    arch = ArchSpec(tuple(int(d) for d in input_dims),
                    [parse_layer(l, i) for i, l in enumerate(data["layers"])])
    cfg = RunConfig(
        arch,
        _build(TrainingConfig, data.get("training"), "training"),
        _build(DatasetConfig, data.get("dataset"), "dataset"),
        str(data.get("out_dir", "out")),
    )
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return parse_config(data)


def teacher_student_config(alf=False, pr=0.5, epochs=30, seed=0, width=16, classes=4, n=30000):
    """Desk-scale student matching the synthetic teacher's layout.

    With ``alf=True`` the second convolution becomes an ALF block; ``pr=0.5``
    keeps 8 of 16 code channels.
    """
    second = "alf" if alf else "conv"
    return parse_config({
        "input": [8, 8, 1],
        "layers": [
            {"type": "conv", "ci": 1, "co": width, "k": 3, "padding": 1},
            {"type": second, "ci": width, "co": width, "k": 3, "padding": 1},
            {"type": "gap"},
            {"type": "linear", "in": width, "out": classes},
        ],
        "training": {"epochs": epochs, "pr": pr, "seed": seed, "lr": 0.05, "batch_size": 32,
                     "lr_decay_epochs": 10, "lr_decay": 0.3},
        "dataset": {"kind": "synthetic", "width": width, "classes": classes, "n": n,
                    "rank": 4, "margin_quantile": 0.7},
    })
