"""Periodic rank-based masking of code channels.

Every ``m`` steps the mask is recomputed from scratch: the
``min(floor(pr * C_code), C_code - 1)`` least important channels are switched
off, so a channel pruned earlier can come back.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np

from .block import ALFBlock, encode_filters

DEFAULT_M = 8
DEFAULT_PR = 0.85


def pruned_count(pr: float, c_code: int) -> int:
    # decimal reading of pr: 0.3 * 10 must give 3, not 2.999...
    return min(math.floor(Fraction(repr(float(pr))) * c_code), c_code - 1)


@dataclass
class FactorizerState:
    m: int = DEFAULT_M
    pr: float = DEFAULT_PR
    step: int = 0
    importances: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"mask period m must be positive, got {self.m}")
        if not 0.0 <= self.pr < 1.0:
            raise ValueError(f"pruning rate must lie in [0, 1), got {self.pr}")


def compute_importances(block: ALFBlock) -> np.ndarray:
    """Norm of each unmasked code filter times the norm of its expansion row."""
    code = encode_filters(block, masked=False).astype(np.float64)
    code_norm = np.sqrt((code * code).sum(axis=(0, 1, 2)))
    exp = block.W_exp[0, 0].astype(np.float64)
    exp_norm = np.sqrt((exp * exp).sum(axis=1))
    return code_norm * exp_norm


def update_mask(state: FactorizerState, importances) -> np.ndarray:
    importances = np.asarray(importances, dtype=np.float64)
    if importances.size == 0:
        raise ValueError("cannot build a mask from an empty importance vector")
    k = pruned_count(state.pr, importances.size)
    order = np.argsort(importances, kind="stable")
    mask = np.ones(importances.size, dtype=np.float32)
    mask[order[:k]] = 0.0
    return mask


def step_schedule(state: FactorizerState, block: ALFBlock) -> bool:
    """Advance one training step; returns True when the mask was refreshed."""
    state.step += 1
    if state.step % state.m:
        return False
    state.importances = compute_importances(block)
    block.soft_scores = state.importances.astype(np.float32)
    block.mask = update_mask(state, state.importances)
    return True
