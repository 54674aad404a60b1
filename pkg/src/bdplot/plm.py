"""Discontinuous three-piece linear model with penalised knot search.

A curve on the BD grid is split at knots ``kappa2 <= kappa3`` into
``(0, kappa2]``, ``(kappa2, kappa3]`` and ``(kappa3, 2]``; each piece gets
its own weighted least-squares line (no continuity). The knots minimise

    L(kappa2, kappa3) + lam * P(kappa2 - 1) + lam * P(1 - kappa3)

with ``P(x) = inf`` for ``x >= 0`` and ``x**2`` otherwise, so the first knot
sits strictly inside the nucleus and the second strictly outside.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import BDWarning, DataError
from .profiles import GRID, GRID_WEIGHTS, density_weight

LAMBDA_LADDER = 1e-6 * 4.0 ** np.arange(13)
PARAMETERS = ("a1", "a2", "a3", "b1", "b2", "b3", "kappa2", "kappa3")
MIN_SEGMENT = 2


def _grid_index(kappa):
    k = float(kappa) * 100.0
    j = int(round(k))
    if abs(k - j) > 1e-6 or not 0 <= j <= GRID.size:
        raise DataError(f"knot {kappa} is not on the 0.01 grid within [0, 2]")
    return j


def _weights(weight):
    if weight is None or weight is density_weight:
        return GRID_WEIGHTS
    if callable(weight):
        return np.asarray(weight(GRID), dtype=float)
    w = np.asarray(weight, dtype=float)
    if w.shape != GRID.shape:
        raise DataError("weight vector must match the grid")
    return w


def _curve(curve):
    y = np.asarray(getattr(curve, "values", curve), dtype=float)
    if y.shape != GRID.shape:
        raise DataError(f"curve must have {GRID.size} values")
    return y


def _wls(r, y, w):
    sw, sr, sy = w.sum(), (w * r).sum(), (w * y).sum()
    rbar, ybar = sr / sw, sy / sw
    sxx = float(np.sum(w * (r - rbar) ** 2))
    b = float(np.sum(w * (r - rbar) * (y - ybar)) / sxx) if sxx > 0 else 0.0
    a = float(ybar - b * rbar)
    return a, b, float(np.sum(w * (y - a - b * r) ** 2))


def fit_segments(curve, kappa2, kappa3, weight=density_weight):
    """Weighted least-squares lines on the three knot-delimited pieces.

    Grid point ``r`` belongs to piece ``i`` when ``kappa_i < r <= kappa_{i+1}``.
    An empty middle piece (``kappa2 == kappa3``) is allowed and reported as
    ``nan`` coefficients with the ``degenerate`` flag.

    Returns
    -------
    a, b : ndarray of shape (3,)
        Intercepts and slopes.
    wsse : float
        Total weighted residual sum of squares.
    degenerate : bool
    """
    y, w = _curve(curve), _weights(weight)
    j, m = _grid_index(kappa2), _grid_index(kappa3)
    if j > m:
        raise DataError("kappa2 must not exceed kappa3")
    bounds = [(0, j), (j, m), (m, GRID.size)]
    a, b = np.full(3, np.nan), np.full(3, np.nan)
    wsse = 0.0
    degenerate = False
    for i, (s, e) in enumerate(bounds):
        if i == 1 and e == s:
            degenerate = True
            continue
        if e - s < MIN_SEGMENT:
            raise DataError(f"segment {i + 1} has {e - s} grid point(s); need {MIN_SEGMENT}")
        a[i], b[i], sse = _wls(GRID[s:e], y[s:e], w[s:e])
        wsse += sse
    return a, b, wsse, degenerate


def _segment_cost_table(y, w):
    """``cost[s, e]`` = WLS residual SS of points ``s..e-1`` (nan if < 2 points)."""
    r = GRID
    yc = y - np.average(y, weights=w)  # centring limits cancellation
    rc = r - 1.0
    cums = [np.r_[0.0, np.cumsum(v)] for v in (w, w * rc, w * rc ** 2, w * yc, w * rc * yc, w * yc ** 2)]
    n = r.size
    s_idx, e_idx = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    sw, sr, srr, sy, sry, syy = (c[e_idx] - c[s_idx] for c in cums)
    with np.errstate(invalid="ignore", divide="ignore"):
        sxx = srr - sr ** 2 / sw
        sxy = sry - sr * sy / sw
        syy_c = syy - sy ** 2 / sw
        cost = syy_c - np.where(sxx > 0, sxy ** 2 / sxx, 0.0)
    cost = np.maximum(cost, 0.0)
    cost[e_idx - s_idx < MIN_SEGMENT] = np.nan
    return cost


def _feasible_cells():
    """Knot index pairs (j, m) with kappa2 < 1 < kappa3 and >= 2 points per piece."""
    n = GRID.size
    js, ms = np.meshgrid(np.arange(1, n + 1), np.arange(1, n + 1), indexing="ij")
    ok = (js <= ms) & (js < 100) & (ms > 100)
    ok &= (js >= MIN_SEGMENT) & (n - ms >= MIN_SEGMENT) & (ms - js >= MIN_SEGMENT)
    return js[ok], ms[ok]


FEASIBLE_J, FEASIBLE_M = _feasible_cells()


def knot_penalty(kappa2, kappa3):
    """``P(kappa2 - 1) + P(1 - kappa3)`` (unscaled; ``inf`` when infeasible)."""
    k2, k3 = np.asarray(kappa2, dtype=float), np.asarray(kappa3, dtype=float)
    p = np.where(k2 < 1.0, (k2 - 1.0) ** 2, np.inf) + np.where(k3 > 1.0, (1.0 - k3) ** 2, np.inf)
    return p


def criterion_surface(curve, weight=density_weight):
    """Weighted SSE ``L`` and unscaled penalty on every feasible knot pair."""
    y, w = _curve(curve), _weights(weight)
    cost = _segment_cost_table(y, w)
    j, m = FEASIBLE_J, FEASIBLE_M
    loss = cost[0, j] + cost[j, m] + cost[m, GRID.size]
    pen = knot_penalty(GRID[j - 1], GRID[m - 1])
    return j, m, loss, pen


def _argmin_cells(total):
    best = np.min(total)
    tol = 1e-12 + 1e-9 * abs(best)
    return np.flatnonzero(total <= best + tol)


@dataclass
class PiecewiseFit:
    kappa2: float
    kappa3: float
    a: np.ndarray
    b: np.ndarray
    r_squared: float
    lambda_knot: float
    wsse: float
    criterion: float
    nucleus_id: object = None
    channel: str | None = None
    flags: tuple = ()
    info: dict = field(default_factory=dict)

    def params(self):
        return dict(zip(PARAMETERS, (*map(float, self.a), *map(float, self.b),
                                     self.kappa2, self.kappa3)))

    def predict(self, r=GRID):
        r = np.asarray(r, dtype=float)
        piece = np.where(r <= self.kappa2, 0, np.where(r <= self.kappa3, 1, 2))
        return self.a[piece] + self.b[piece] * r


def r_squared(y, fitted):
    """``1 - sum (g - g_hat)**2 / sum (g - mean g)**2``, unweighted."""
    y, fitted = np.asarray(y, dtype=float), np.asarray(fitted, dtype=float)
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    tiny = 1e-24 * float(np.sum(y ** 2)) + 1e-300
    if ss_tot <= tiny:
        return 1.0 if ss_res <= tiny else -np.inf
    return 1.0 - ss_res / ss_tot


def fit_piecewise(curve, lambda_knot="auto", weight=density_weight, ladder=LAMBDA_LADDER):
    """Grid-search the knot pair and fit the three-piece model.

    Parameters
    ----------
    curve : ExpressionCurve or array of shape (200,)
    lambda_knot : float or "auto"
        Knot penalty. ``"auto"`` walks ``ladder`` upwards and takes the
        first value at which the penalised minimiser is a single grid cell.
    weight : callable or array
        Per-point weights, :func:`~bdplot.profiles.density_weight` by default.

    Returns
    -------
    PiecewiseFit
    """
    y = _curve(curve)
    j, m, loss, pen = criterion_surface(y, weight)
    ok = np.isfinite(loss) & np.isfinite(pen)
    if not ok.any():
        raise DataError("no feasible knot pair")
    j, m, loss, pen = j[ok], m[ok], loss[ok], pen[ok]
    flags = []
    if isinstance(lambda_knot, str):
        if lambda_knot != "auto":
            raise DataError(f"lambda_knot must be a number or 'auto', got {lambda_knot!r}")
        lam = None
        for cand in ladder:
            if _argmin_cells(loss + cand * pen).size == 1:
                lam = float(cand)
                break
        if lam is None:
            lam = float(ladder[-1])
            flags.append("knot_not_unique")
            warnings.warn(f"knot minimiser not unique up to lambda={lam:g}", BDWarning, stacklevel=2)
    else:
        lam = float(lambda_knot)
        if not lam >= 0:
            raise DataError("lambda_knot must be nonnegative")
    total = loss + lam * pen
    best = _argmin_cells(total)
    # ties: prefer knots nearest the boundary, then lowest index
    k = best[np.lexsort((m[best], j[best], pen[best]))[0]]
    k2, k3 = float(GRID[j[k] - 1]), float(GRID[m[k] - 1])
    a, b, wsse, _ = fit_segments(y, k2, k3, weight)
    fit = PiecewiseFit(kappa2=k2, kappa3=k3, a=a, b=b, r_squared=0.0, lambda_knot=lam,
                       wsse=wsse, criterion=float(wsse + lam * pen[k]),
                       nucleus_id=getattr(curve, "nucleus_id", None),
                       channel=getattr(curve, "channel", None), flags=tuple(flags))
    fit.r_squared = r_squared(y, fit.predict())
    return fit


def _summary(x):
    return {"median": float(np.median(x)), "mean": float(np.mean(x)),
            "sd": float(np.std(x, ddof=1)) if len(x) > 1 else 0.0, "n": int(len(x))}


def compare_groups(fits_a, fits_c, paired=False, labels=("A", "C")):
    """Per-parameter t-tests between two lists of :class:`PiecewiseFit`.

    Welch two-sample tests for independent groups, paired t-tests (pairs in
    list order) otherwise. Parameters whose variance is zero are flagged and
    their p-value is omitted.
    """
    if paired:
        if len(fits_a) != len(fits_c):
            raise DataError("paired comparison needs equally long fit lists")
        if len(fits_a) < 3:
            raise DataError("paired comparison needs at least 3 pairs")
    elif len(fits_a) < 2 or len(fits_c) < 2:
        raise DataError("each group needs at least 2 fits")
    la, lc = labels
    report = {"design": "paired" if paired else "unpaired", "groups": list(labels), "parameters": {}}
    for name in PARAMETERS:
        xa = np.array([f.params()[name] for f in fits_a])
        xc = np.array([f.params()[name] for f in fits_c])
        entry = {la: _summary(xa), lc: _summary(xc)}
        if paired:
            diff = xa - xc
            degenerate = np.ptp(diff) <= 1e-12 * max(1.0, float(np.abs(diff).max()))
            if not degenerate:
                res = stats.ttest_rel(xa, xc)
            entry["mean_difference"] = float(diff.mean())
        else:
            degenerate = np.ptp(xa) == 0 and np.ptp(xc) == 0
            if not degenerate:
                res = stats.ttest_ind(xa, xc, equal_var=False)
        if degenerate:
            entry.update(statistic=None, p_value=None, degenerate=True)
        else:
            entry.update(statistic=float(res.statistic), p_value=float(res.pvalue), degenerate=False)
        report["parameters"][name] = entry
    report["median_r_squared"] = {la: float(np.median([f.r_squared for f in fits_a])),
                                  lc: float(np.median([f.r_squared for f in fits_c]))}
    return report


CSV_FIELDS = ("nucleus_id", "channel", "group", "kappa2", "kappa3", "a1", "a2", "a3",
              "b1", "b2", "b3", "r_squared", "lambda_knot")


def fits_csv(fits, groups=None):
    """Fits as CSV text, one row per curve."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(CSV_FIELDS)
    for i, f in enumerate(fits):
        p = f.params()
        row = [f.nucleus_id, f.channel or "", groups[i] if groups is not None else ""]
        row += [repr(float(p[k])) for k in CSV_FIELDS[3:11]]
        row += [repr(float(f.r_squared)), repr(float(f.lambda_knot))]
        out.writerow(row)
    return buf.getvalue()


def write_fits_csv(path, fits, groups=None):
    with open(path, "w", newline="") as fh:
        fh.write(fits_csv(fits, groups))
