"""Exact parameter and multiply-accumulate accounting, standard conv vs ALF.

Everything is integer or :class:`fractions.Fraction`; the break-even floor is
discontinuous and must not be subject to float rounding.  Bias and activation
costs are left out of both sides.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction

from .errors import ShapeError

CSV_COLUMNS = (
    "layer", "kind", "ci", "co", "k", "ho", "wo", "c_code_eff", "c_code_max",
    "params_standard", "params_alf", "ops_standard", "ops_alf",
    "gain_params", "gain_ops", "economical",
)


def code_max(ci: int, co: int, k: int) -> int:
    """Largest code width at which the ALF layer is no more expensive."""
    k2 = k * k
    return (ci * co * k2) // (ci * k2 + co)


def gain_ratio(ci: int, co: int, k: int, c_code: int) -> Fraction:
    if c_code < 1:
        raise ValueError("c_code must be at least 1")
    k2 = k * k
    return Fraction(ci * co * k2, c_code * (ci * k2 + co))


@dataclass(frozen=True)
class LayerShape:
    ci: int
    co: int
    k: int
    ho: int
    wo: int
    name: str = ""
    kind: str = "alf"

    def __post_init__(self):
        if min(self.ci, self.co, self.k, self.ho, self.wo) < 1:
            raise ShapeError(f"invalid layer geometry {self}")


@dataclass(frozen=True)
class LayerCost:
    layer: str
    kind: str
    ci: int
    co: int
    k: int
    ho: int
    wo: int
    c_code_eff: int
    c_code_max: int
    params_standard: int
    params_alf: int
    ops_standard: int
    ops_alf: int

    @property
    def gain_params(self) -> Fraction:
        return Fraction(self.params_standard, self.params_alf)

    @property
    def gain_ops(self) -> Fraction:
        return Fraction(self.ops_standard, self.ops_alf)

    @property
    def economical(self) -> bool:
        return self.kind != "alf" or self.c_code_eff < self.c_code_max


def layer_cost(layer: LayerShape, c_code_eff: int | None = None) -> LayerCost:
    """Cost entry for one layer.

    ``kind == "conv"`` layers are left unfactorized, so both columns carry the
    standard cost.
    """
    k2 = layer.k * layer.k
    params_std = k2 * layer.ci * layer.co
    if layer.kind == "alf":
        if c_code_eff is None or not 1 <= c_code_eff <= layer.co:
            raise ShapeError(f"c_code_eff={c_code_eff} out of range for Co={layer.co}")
        params_alf = k2 * layer.ci * c_code_eff + c_code_eff * layer.co
    else:
        c_code_eff = layer.co
        params_alf = params_std
    pixels = layer.ho * layer.wo
    return LayerCost(
        layer.name, layer.kind, layer.ci, layer.co, layer.k, layer.ho, layer.wo,
        c_code_eff, code_max(layer.ci, layer.co, layer.k),
        params_std, params_alf, pixels * params_std, pixels * params_alf,
    )


@dataclass
class CostReport:
    layers: list

    @property
    def params_standard(self):
        return sum(e.params_standard for e in self.layers)

    @property
    def params_alf(self):
        return sum(e.params_alf for e in self.layers)

    @property
    def ops_standard(self):
        return sum(e.ops_standard for e in self.layers)

    @property
    def ops_alf(self):
        return sum(e.ops_alf for e in self.layers)

    @property
    def gain_params(self):
        return Fraction(self.params_standard, self.params_alf) if self.layers else Fraction(1)

    @property
    def gain_ops(self):
        return Fraction(self.ops_standard, self.ops_alf) if self.layers else Fraction(1)

    def to_csv(self) -> str:
        """One row per layer, then a ``total`` row. Gains are printed to 6 decimals."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for e in self.layers:
            writer.writerow([
                e.layer, e.kind, e.ci, e.co, e.k, e.ho, e.wo, e.c_code_eff, e.c_code_max,
                e.params_standard, e.params_alf, e.ops_standard, e.ops_alf,
                _fmt(e.gain_params), _fmt(e.gain_ops), int(e.economical),
            ])
        writer.writerow([
            "total", "", "", "", "", "", "", "", "",
            self.params_standard, self.params_alf, self.ops_standard, self.ops_alf,
            _fmt(self.gain_params), _fmt(self.gain_ops), int(all(e.economical for e in self.layers)),
        ])
        return buf.getvalue()


def _fmt(frac: Fraction) -> str:
    return f"{float(frac):.6f}"
