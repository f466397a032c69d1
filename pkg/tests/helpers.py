import numpy as np

from alf.config import parse_config
from alf.data import synth_teacher
from alf.model import Model


def toy_config(alf=True, epochs=2, width=6, **training):
    t = {"epochs": epochs, "batch_size": 16, "lr": 0.05, "pr": 0.5, "m": 4}
    t.update(training)
    return parse_config({
        "input": [6, 6, 1],
        "layers": [
            {"type": "conv", "ci": 1, "co": width, "k": 3, "padding": 1},
            {"type": "alf" if alf else "conv", "ci": width, "co": width, "k": 3, "padding": 1},
            {"type": "gap"},
            {"type": "linear", "in": width, "out": 3},
        ],
        "training": t,
        "dataset": {"kind": "synthetic", "n": 120, "width": width, "classes": 3},
    })


def toy_data(n=120, seed=0):
    data, _ = synth_teacher(seed, n, 2, width=6, classes=3, hw=6)
    return data


def toy_model(cfg=None, seed=0):
    cfg = cfg or toy_config()
    return Model.from_arch(cfg.arch, rng=seed)
