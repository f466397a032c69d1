import csv
import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alf.cost import CSV_COLUMNS, CostReport, LayerShape, code_max, gain_ratio, layer_cost
from alf.tensor import ConvGeometry, MacCounter, conv2d_naive


def brute_code_max(ci, co, k):
    """Largest c with c * (ci*k^2 + co) <= ci*co*k^2, by linear search."""
    c = 0
    while (c + 1) * (ci * k * k + co) <= ci * co * k * k:
        c += 1
    return c


class TestCodeMax:
    def test_pinned(self):
        assert code_max(64, 128, 3) == 104 == 73728 // 704

    def test_no_gain_possible(self):
        assert code_max(1, 2, 1) == 0

    def test_symmetric_pointwise(self):
        assert code_max(8, 8, 1) == 4
        for c in range(1, 40):
            assert code_max(c, c, 1) == c // 2

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 64), st.integers(1, 64), st.sampled_from([1, 3, 5, 7]))
    def test_matches_linear_search(self, ci, co, k):
        assert code_max(ci, co, k) == brute_code_max(ci, co, k)


class TestGainRatio:
    def test_value(self):
        g = gain_ratio(64, 128, 3, 52)
        assert g == Fraction(73728, 36608)
        assert float(g) == pytest.approx(2.014, abs=1e-3)

    def test_boundary(self):
        assert gain_ratio(64, 128, 3, 104) >= 1
        assert gain_ratio(64, 128, 3, 105) < 1

    def test_exact_one(self):
        assert gain_ratio(8, 8, 1, 4) == 1

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            gain_ratio(4, 4, 3, 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 128), st.integers(1, 128), st.sampled_from([1, 3, 5]))
    def test_strictly_decreasing(self, ci, co, k):
        ratios = [gain_ratio(ci, co, k, c) for c in range(1, co + 1)]
        assert all(a > b for a, b in zip(ratios, ratios[1:]))


def test_boundary_suite_randomized():
    r = np.random.default_rng(2024)
    checked = 0
    while checked < 1000:
        ci, co = (int(v) for v in r.integers(1, 513, 2))
        k = int(r.choice([1, 3, 5, 7]))
        cmax = code_max(ci, co, k)
        if cmax < 1:
            continue
        assert gain_ratio(ci, co, k, cmax) >= 1
        assert gain_ratio(ci, co, k, cmax + 1) < 1
        checked += 1


class TestLayerCost:
    def test_formula_example(self):
        e = layer_cost(LayerShape(64, 128, 3, 16, 16), 52)
        assert (e.params_standard, e.params_alf) == (73728, 36608)
        assert (e.ops_standard, e.ops_alf) == (73728 * 256, 36608 * 256)
        assert e.c_code_max == 104
        assert e.gain_params == e.gain_ops == gain_ratio(64, 128, 3, 52)
        assert e.economical

    def test_past_break_even_flagged(self):
        e = layer_cost(LayerShape(64, 128, 3, 8, 8), 105)
        assert e.gain_params < 1 and not e.economical

    def test_symmetric_gain_one(self):
        e = layer_cost(LayerShape(8, 8, 1, 4, 4), 4)
        assert e.gain_params == 1

    def test_standard_layer(self):
        e = layer_cost(LayerShape(3, 16, 3, 8, 8, kind="conv"))
        assert e.params_alf == e.params_standard == 432
        assert e.gain_ops == 1

    def test_invalid(self):
        with pytest.raises(ValueError):
            LayerShape(0, 3, 3, 4, 4)
        with pytest.raises(ValueError):
            layer_cost(LayerShape(4, 4, 3, 4, 4), 5)


def test_costs_match_instrumented_conv(rng):
    for _ in range(25):
        ci, co, k = int(rng.integers(1, 5)), int(rng.integers(2, 7)), int(rng.choice([1, 3]))
        c_code = int(rng.integers(1, co + 1))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 2)) if k == 3 else 0
        ho, wo = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        g = ConvGeometry(k, s, p)
        x = rng.normal(size=(1, (ho - 1) * s + k - 2 * p, (wo - 1) * s + k - 2 * p, ci))
        std, alf = MacCounter(), MacCounter()
        conv2d_naive(x, rng.normal(size=(k, k, ci, co)), g, counter=std)
        code = conv2d_naive(x, rng.normal(size=(k, k, ci, c_code)), g, counter=alf)
        conv2d_naive(code, rng.normal(size=(1, 1, c_code, co)), ConvGeometry(1), counter=alf)
        e = layer_cost(LayerShape(ci, co, k, ho, wo), c_code)
        assert (e.ops_standard, e.ops_alf) == (std.macs, alf.macs)


def test_report_csv():
    report = CostReport([layer_cost(LayerShape(64, 128, 3, 16, 16, name="a"), 52),
                         layer_cost(LayerShape(3, 64, 3, 32, 32, name="b", kind="conv"))])
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [r[0] for r in rows[1:]] == ["a", "b", "total"]
    assert rows[1][CSV_COLUMNS.index("c_code_max")] == "104"
    assert int(rows[-1][CSV_COLUMNS.index("params_standard")]) == 73728 + 1728
    assert report.gain_params == Fraction(73728 + 1728, 36608 + 1728)
