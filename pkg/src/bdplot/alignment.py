"""Area scaling and x-axis dilation registration of expression curves.

Registration model: curve ``k`` is aligned by evaluating it at ``r * delta_k``.
Within a group the dilations minimise the weighted registration sum of
squares

    sum_k  int_0^2 w(r) (g_k(r delta_k) - mu(r))**2 dr

by alternating a pointwise-mean update of ``mu`` with independent line
searches for each ``delta_k``. Integrals are Riemann sums on the 0.01 grid.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.interpolate import PchipInterpolator

from ._search import scan_then_golden
from .errors import BDWarning, DataError, NumericalError
from .profiles import GRID, GRID_STEP, ExpressionCurve, density_weight

DELTA_BRACKET = (0.7, 1.3)
LINE_SEARCH_TOL = 1e-4
_UNIT_AREA_TOL = 1e-12


@dataclass
class RegistrationResult:
    dilations: np.ndarray
    mean_curve: np.ndarray  # (n_channels, 200)
    sse_trace: list
    curves: list  # registered curves; a list of tuples for paired designs
    group_dilation: float | None = None
    sse_normalized: float | None = None
    n_iter: int = 0
    flags: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "dilations": [float(d) for d in self.dilations],
            "group_dilation": None if self.group_dilation is None else float(self.group_dilation),
            "sse_trace": [float(s) for s in self.sse_trace],
            "sse_normalized": None if self.sse_normalized is None else float(self.sse_normalized),
            "n_iter": int(self.n_iter),
            "flags": {str(k): sorted(v) for k, v in self.flags.items()},
        }


def curve_area(values):
    return GRID_STEP * float(np.sum(values))


def scale_curve(curve):
    """Divide a curve by its Riemann-sum area so it integrates to 1 on (0, 2]."""
    s = curve_area(curve.values)
    if not s > 0:
        raise DataError(f"curve {curve.nucleus_id} has nonpositive area {s:g}")
    if abs(s - 1.0) <= _UNIT_AREA_TOL:
        return curve.with_values(curve.values.copy())
    return curve.with_values(curve.values / s, scale=curve.scale * s)


def scale_correlation(scales_red, scales_green):
    """Pearson correlation between two channels' per-nucleus scale factors."""
    x = np.asarray(scales_red, dtype=float)
    y = np.asarray(scales_green, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("scale lists must be 1-d and of equal length")
    if x.size < 3:
        raise DataError("need at least 3 scale pairs")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DataError("scale list has zero variance")
    return float(stats.pearsonr(x, y)[0])


class _Dilator:
    """Evaluate ``g(r * delta)`` on the grid for a fixed curve ``g``.

    Monotone cubic (PCHIP) inside [0.01, 2]; linear extrapolation from the
    two end grid values outside.
    """

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        self._pchip = PchipInterpolator(GRID, self.values, extrapolate=False)
        self._lo_slope = (self.values[1] - self.values[0]) / GRID_STEP
        self._hi_slope = (self.values[-1] - self.values[-2]) / GRID_STEP

    def at(self, x):
        x = np.asarray(x, dtype=float)
        out = self._pchip(np.clip(x, GRID[0], GRID[-1]))
        lo, hi = x < GRID[0], x > GRID[-1]
        out = np.where(lo, self.values[0] + self._lo_slope * (x - GRID[0]), out)
        out = np.where(hi, self.values[-1] + self._hi_slope * (x - GRID[-1]), out)
        return out

    def __call__(self, delta):
        if delta == 1.0:
            return self.values.copy()
        return self.at(GRID * delta)

    def many(self, deltas):
        return self.at(np.outer(deltas, GRID))


def _check_delta(delta):
    if not 0.5 <= delta <= 2.0:
        raise DataError(f"dilation {delta} outside [0.5, 2]")


def dilate_curve(curve, delta):
    """Return the curve evaluated at ``r * delta`` on the grid.

    Grid points whose dilated abscissa exceeds 2 are filled by linear
    extrapolation and flag the curve ``extrapolated_tail``.
    """
    _check_delta(delta)
    values = _Dilator(curve.values)(float(delta))
    out = curve.with_values(values, dilation=curve.dilation * float(delta))
    if delta > 1.0 and GRID[-1] * delta > GRID[-1] + 1e-12:
        out = out.flagged("extrapolated_tail")
    return out


def _wsse(values, mean, weight):
    return GRID_STEP * float(np.sum(weight * (values - mean) ** 2))


def _line_search(dilators, target, weight, bracket):
    """Best common dilation for one cell's channel curves against ``target``."""
    def f(d):
        return sum(_wsse(dl(d), target[c], weight) for c, dl in enumerate(dilators))

    def f_vec(ds):
        tot = 0.0
        for c, dl in enumerate(dilators):
            tot = tot + GRID_STEP * np.sum(weight * (dl.many(ds) - target[c]) ** 2, axis=1)
        return tot

    lo, hi = bracket
    n_scan = int(round((hi - lo) / 0.01)) + 1
    x, fx, _, _ = scan_then_golden(f, lo, hi, n_scan=max(n_scan, 11),
                                   tol=LINE_SEARCH_TOL, f_vec=f_vec)
    return x, fx, f


def _procrustes(stack, weight, max_iter, tol, bracket):
    """Alternate mean update and per-cell dilation line search.

    ``stack`` has shape (n_cells, n_channels, 200); one dilation per cell is
    shared by its channels.
    """
    n, nch, _ = stack.shape
    dilators = [[_Dilator(stack[k, c]) for c in range(nch)] for k in range(n)]
    delta = np.ones(n)

    def current():
        return np.array([[dilators[k][c](delta[k]) for c in range(nch)] for k in range(n)])

    cur = current()
    mean = cur.mean(axis=0)
    sse = sum(_wsse(cur[k, c], mean[c], weight) for k in range(n) for c in range(nch))
    trace = [sse]
    n_iter = 0
    for _ in range(max_iter):
        n_iter += 1
        for k in range(n):
            d_new, f_new, f = _line_search(dilators[k], mean, weight, bracket)
            if f_new < f(delta[k]):
                delta[k] = d_new
        cur = current()
        mean = cur.mean(axis=0)
        new = sum(_wsse(cur[k, c], mean[c], weight) for k in range(n) for c in range(nch))
        if new > sse * (1.0 + 1e-9) + 1e-15:
            raise NumericalError(
                f"registration criterion increased from {sse:.6g} to {new:.6g}; "
                "check curve interpolation/extrapolation", trace=trace + [new])
        trace.append(new)
        if sse <= 0 or (sse - new) / sse < tol:
            break
        sse = new
    return delta, trace, n_iter


def _binding(delta, bracket):
    lo, hi = bracket
    return (delta - lo < 1e-3) | (hi - delta < 1e-3)


def _finish(stack, delta, weight, bracket):
    gm = float(np.exp(np.mean(np.log(delta))))
    delta = delta / gm
    binding = _binding(delta * gm, bracket)
    if binding.any():
        warnings.warn(f"dilation search bracket {bracket} binds for {int(binding.sum())} curve(s)",
                      BDWarning, stacklevel=3)
    n, nch, _ = stack.shape
    reg = np.array([[_Dilator(stack[k, c])(delta[k]) for c in range(nch)] for k in range(n)])
    mean = reg.mean(axis=0)
    sse = sum(_wsse(reg[k, c], mean[c], weight) for k in range(n) for c in range(nch))
    return delta, reg, mean, sse, binding


def _weights(weight):
    if weight is None:
        return density_weight(GRID)
    if callable(weight):
        return np.asarray(weight(GRID), dtype=float)
    return np.asarray(weight, dtype=float)


def _check_scaled(curves):
    for c in curves:
        if abs(curve_area(c.values) - 1.0) > 1e-6:
            warnings.warn(f"curve {c.nucleus_id} is not unit-area; register scaled curves",
                          BDWarning, stacklevel=3)
            break


def register_within(curves, weight=density_weight, max_iter=20, tol=1e-3,
                    bracket=DELTA_BRACKET):
    """Register a group of scaled curves to their common mean by dilation.

    Returns a :class:`RegistrationResult` whose dilations are normalised to
    geometric mean 1 (a common dilation is not identifiable) and whose
    ``curves`` are the input curves re-dilated by them.
    """
    curves = list(curves)
    if len(curves) < 2:
        raise DataError("registration needs at least 2 curves")
    _check_scaled(curves)
    w = _weights(weight)
    stack = np.array([[c.values] for c in curves])
    delta, trace, n_iter = _procrustes(stack, w, max_iter, tol, bracket)
    delta, reg, mean, sse, binding = _finish(stack, delta, w, bracket)
    out = []
    for k, c in enumerate(curves):
        rc = c.with_values(reg[k, 0], dilation=c.dilation * float(delta[k]))
        if delta[k] > 1.0:
            rc = rc.flagged("extrapolated_tail")
        out.append(rc)
    flags = {"binding_bracket": [str(curves[k].nucleus_id) for k in np.flatnonzero(binding)],
             "extrapolated_tail": [str(curves[k].nucleus_id) for k in np.flatnonzero(delta > 1.0)]}
    return RegistrationResult(dilations=delta, mean_curve=mean, sse_trace=trace, curves=out,
                              sse_normalized=sse, n_iter=n_iter, flags=flags)


def bregsse(mean_a, mean_c, delta):
    """Between-group registration criterion (unweighted)."""
    a = mean_a.values if isinstance(mean_a, ExpressionCurve) else np.asarray(mean_a, dtype=float)
    c = mean_c.values if isinstance(mean_c, ExpressionCurve) else np.asarray(mean_c, dtype=float)
    return _wsse(_Dilator(a)(float(delta)), c, 1.0)


def register_between(mean_a, mean_c, bracket=DELTA_BRACKET):
    """Dilation ``delta_A`` of group A's mean that best matches group C's mean.

    Minimises ``int (mu_A(r delta_A) - mu_C(r))**2 dr``. The combined
    dilation for a nucleus of group A is ``delta_A * delta_k``.
    """
    a = mean_a.values if isinstance(mean_a, ExpressionCurve) else np.asarray(mean_a, dtype=float)
    c = mean_c.values if isinstance(mean_c, ExpressionCurve) else np.asarray(mean_c, dtype=float)
    if a.shape != GRID.shape or c.shape != GRID.shape:
        raise DataError("group means must be on the 200-point grid")
    x, fx, f = _line_search([_Dilator(a)], c[None, :], 1.0, bracket)
    if not fx < f(1.0):
        return 1.0
    if _binding(np.array([x]), bracket)[0]:
        warnings.warn(f"between-group dilation {x:.4f} at bracket end", BDWarning, stacklevel=2)
    return float(x)


def register_paired(pairs, weight=density_weight, max_iter=20, tol=1e-3,
                    bracket=DELTA_BRACKET):
    """Paired registration: one dilation per cell shared by both channel curves."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise DataError("paired registration needs at least 2 pairs")
    _check_scaled([c for p in pairs for c in p])
    w = _weights(weight)
    stack = np.array([[y.values, r.values] for y, r in pairs])
    delta, trace, n_iter = _procrustes(stack, w, max_iter, tol, bracket)
    delta, reg, mean, sse, binding = _finish(stack, delta, w, bracket)
    out = []
    for k, (y, r) in enumerate(pairs):
        d = float(delta[k])
        pair = (y.with_values(reg[k, 0], dilation=y.dilation * d),
                r.with_values(reg[k, 1], dilation=r.dilation * d))
        if d > 1.0:
            pair = tuple(c.flagged("extrapolated_tail") for c in pair)
        out.append(pair)
    flags = {"binding_bracket": [str(pairs[k][0].nucleus_id) for k in np.flatnonzero(binding)],
             "extrapolated_tail": [str(pairs[k][0].nucleus_id) for k in np.flatnonzero(delta > 1.0)]}
    return RegistrationResult(dilations=delta, mean_curve=mean, sse_trace=trace, curves=out,
                              sse_normalized=sse, n_iter=n_iter, flags=flags)


def mean_curve(curves, nucleus_id="mean", channel=None):
    vals = np.mean([c.values for c in curves], axis=0)
    return ExpressionCurve(values=vals, nucleus_id=nucleus_id,
                           channel=channel if channel is not None else curves[0].channel)
