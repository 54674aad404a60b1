import numpy as np
import pytest
from hypothesis import given, strategies as st

from bdplot.errors import DataError
from bdplot.plm import (LAMBDA_LADDER, PARAMETERS, compare_groups, fit_piecewise, fit_segments,
                        fits_csv, knot_penalty, r_squared)
from bdplot.profiles import GRID, GRID_WEIGHTS


def normal_equations_wls(r, y, w):
    x = np.c_[np.ones_like(r), r]
    beta = np.linalg.solve(x.T @ (w[:, None] * x), x.T @ (w * y))
    return beta, float(np.sum(w * (y - x @ beta) ** 2))


def enumerate_criterion(y, lam):
    """Penalised criterion over every feasible knot pair, by direct refits."""
    best = (np.inf, None)
    for j in range(2, 100):
        for m in range(101, 199):
            total = 0.0
            for s, e in ((0, j), (j, m), (m, 200)):
                total += normal_equations_wls(GRID[s:e], y[s:e], GRID_WEIGHTS[s:e])[1]
            total += lam * ((GRID[j - 1] - 1) ** 2 + (1 - GRID[m - 1]) ** 2)
            if total < best[0]:
                best = (total, (j, m))
    return best


def ramp_curve(rng=None, sigma=0.0):
    y = np.where(GRID <= 0.85, 0.5, np.where(GRID <= 1.15, 0.5 * (1.15 - GRID) / 0.3, 0.0))
    if rng is not None:
        y = y + rng.normal(0, sigma, GRID.size)
    return y


def test_single_line_recovered_thrice():
    y = 2.0 - 0.7 * GRID
    a, b, wsse, degenerate = fit_segments(y, 0.5, 1.5)
    assert np.allclose(a, 2.0) and np.allclose(b, -0.7)
    assert wsse == pytest.approx(0, abs=1e-20) and not degenerate


def test_two_piece_with_empty_middle():
    y = np.where(GRID <= 1, 1.0, 2 - GRID)
    a, b, wsse, degenerate = fit_segments(y, 1.0, 1.0)
    assert degenerate and np.isnan(a[1])
    assert (a[0], b[0]) == pytest.approx((1, 0), abs=1e-12)
    assert (a[2], b[2]) == pytest.approx((2, -1), abs=1e-12)
    assert wsse < 1e-20


@given(st.integers(0, 10 ** 6), st.integers(3, 90), st.integers(105, 190))
def test_fixed_knots_match_normal_equations(seed, j, m):
    y = np.random.default_rng(seed).normal(size=200)
    a, b, wsse, _ = fit_segments(y, GRID[j - 1], GRID[m - 1])
    total = 0.0
    for i, (s, e) in enumerate(((0, j), (j, m), (m, 200))):
        beta, sse = normal_equations_wls(GRID[s:e], y[s:e], GRID_WEIGHTS[s:e])
        assert np.allclose([a[i], b[i]], beta, rtol=1e-8, atol=1e-10)
        total += sse
    assert wsse == pytest.approx(total, rel=1e-10, abs=1e-10)


def test_short_segment_rejected():
    with pytest.raises(DataError):
        fit_segments(np.zeros(200), 0.01, 1.5)
    with pytest.raises(DataError):
        fit_segments(np.zeros(200), 1.2, 1.1)
    with pytest.raises(DataError):
        fit_segments(np.zeros(200), 0.555, 1.5)


def test_ramp_knots_recovered():
    rng = np.random.default_rng(0)
    fit = fit_piecewise(ramp_curve(rng, 0.005))
    assert abs(fit.kappa2 - 0.85) <= 0.02 + 1e-9
    assert abs(fit.kappa3 - 1.15) <= 0.02 + 1e-9
    assert fit.b[1] < 0
    assert fit.r_squared > 0.99


def test_constant_curve_knots_hug_boundary():
    fit = fit_piecewise(np.full(200, 3.0))
    assert (fit.kappa2, fit.kappa3) == (0.99, 1.01)
    assert np.allclose(fit.b, 0, atol=1e-12)
    assert fit.r_squared == 1.0


def test_exhaustive_against_re_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(3):
        y = np.cumsum(rng.normal(0, 0.05, 200))
        fit = fit_piecewise(y, lambda_knot=0.01)
        total, _ = enumerate_criterion(y, 0.01)
        assert fit.criterion == pytest.approx(total, rel=1e-9, abs=1e-12)


@given(st.integers(0, 10 ** 6))
def test_feasibility(seed):
    y = np.random.default_rng(seed).normal(size=200)
    fit = fit_piecewise(y)
    assert 0 < fit.kappa2 < 1 < fit.kappa3 < 2
    assert fit.r_squared <= 1
    assert fit.lambda_knot in LAMBDA_LADDER


def test_penalty_monotonicity():
    rng = np.random.default_rng(2)
    y = ramp_curve(rng, 0.02)
    prev = None
    for lam in LAMBDA_LADDER:
        f = fit_piecewise(y, lambda_knot=float(lam))
        if prev is not None:
            assert f.kappa2 >= prev.kappa2 - 1e-12
            assert f.kappa3 <= prev.kappa3 + 1e-12
        prev = f


def test_knot_penalty():
    assert knot_penalty(0.8, 1.3) == pytest.approx(0.04 + 0.09)
    assert np.isinf(knot_penalty(1.0, 1.3)) and np.isinf(knot_penalty(0.9, 1.0))


def test_r_squared_definition():
    y = np.arange(10.0)
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(10, y.mean())) == 0.0


def _fits(rng, b2, n, sd=0.05):
    out = []
    for _ in range(n):
        slope = rng.normal(b2, sd)
        y = np.where(GRID <= 0.9, 1.0, np.where(GRID <= 1.1, 1.0 + slope * (GRID - 0.9),
                                                    1.0 + 0.2 * slope))
        out.append(fit_piecewise(y + rng.normal(0, 0.002, 200)))
    return out


def test_compare_groups_power_fixture():
    rng = np.random.default_rng(3)
    fa, fc = _fits(rng, -2.0, 12), _fits(rng, -2.25, 12)
    rep = compare_groups(fa, fc)
    assert rep["parameters"]["b2"]["p_value"] < 0.001
    assert set(rep["parameters"]) == set(PARAMETERS)


def test_compare_identical_lists():
    rng = np.random.default_rng(4)
    fa = _fits(rng, -2.0, 5)
    rep = compare_groups(fa, fa)
    for entry in rep["parameters"].values():
        assert entry["degenerate"] or entry["p_value"] == pytest.approx(1.0)
    paired = compare_groups(fa, fa, paired=True)
    assert all(e["degenerate"] and e["p_value"] is None for e in paired["parameters"].values())


def test_compare_requires_enough_fits():
    rng = np.random.default_rng(5)
    fa = _fits(rng, -2.0, 2)
    with pytest.raises(DataError):
        compare_groups(fa, fa, paired=True)
    with pytest.raises(DataError):
        compare_groups(fa[:1], fa)


def test_csv_export():
    fit = fit_piecewise(ramp_curve())
    fit.nucleus_id, fit.channel = "n1", "marker"
    text = fits_csv([fit], ["A"])
    header, row = text.strip().splitlines()
    assert header.startswith("nucleus_id,channel,group,kappa2,kappa3,a1")
    assert row.startswith("n1,marker,A,")
