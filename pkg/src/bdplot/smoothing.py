"""Cubic smoothing splines.

Two estimators live here:

* :func:`fit_periodic_spline` -- periodic cubic smoothing spline through
  closed-curve samples (Reinsch form with cyclic band matrices). Used to
  smooth hand-drawn nucleus boundaries.
* :class:`PenalizedSpline` -- roughness-penalised cubic B-spline regression
  with knots at (thinned) distinct abscissae, minimising
  ``sum w_i (y_i - g(x_i))**2 + lam * int g''(u)**2 du``. Used for the
  average expression curves.

Both select ``lam`` by generalised cross-validation when it is not given.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline, CubicSpline

from ._search import scan_then_golden
from .errors import BDWarning, DataError

#: log10 bracket for GCV on expression curves
CURVE_LOG10_LAMBDA = (-8.0, 2.0)
#: log10 bracket for GCV on boundary coordinates (parameter range is 2*pi)
BOUNDARY_LOG10_LAMBDA = (-10.0, 2.0)
#: used when the GCV criterion is flat (noise-free data)
DEFAULT_CURVE_LAMBDA = 1e-3
MAX_KNOTS = 400


def _is_flat(values, scale):
    values = values[np.isfinite(values)]
    if values.size == 0:
        return True
    return (values.max() - values.min()) <= 1e-12 * max(scale, 1e-300)


# ---------------------------------------------------------------------------
# periodic smoothing spline
# ---------------------------------------------------------------------------

def periodic_roughness_matrix(t, period):
    """Matrix ``K`` with ``g' K g = int f''**2`` for the periodic cubic
    interpolant ``f`` of values ``g`` at sorted parameters ``t``."""
    t = np.asarray(t, dtype=float)
    n = t.size
    h = np.diff(np.append(t, t[0] + period))
    hm = np.roll(h, 1)
    idx = np.arange(n)
    prev, nxt = (idx - 1) % n, (idx + 1) % n
    qt = np.zeros((n, n))
    r = np.zeros((n, n))
    np.add.at(qt, (idx, prev), 1.0 / hm)
    np.add.at(qt, (idx, idx), -1.0 / hm - 1.0 / h)
    np.add.at(qt, (idx, nxt), 1.0 / h)
    np.add.at(r, (idx, idx), (hm + h) / 3.0)
    np.add.at(r, (idx, prev), hm / 6.0)
    np.add.at(r, (idx, nxt), h / 6.0)
    k = qt.T @ linalg.solve(r, qt, assume_a="pos")
    return 0.5 * (k + k.T)


@dataclass
class PeriodicFit:
    t: np.ndarray
    fitted: np.ndarray
    lam: float
    period: float
    edf: float

    def evaluate(self, s):
        """Evaluate the fitted closed curve at parameters ``s``."""
        tt = np.append(self.t, self.t[0] + self.period)
        yy = np.vstack([self.fitted, self.fitted[:1]])
        cs = CubicSpline(tt, yy, bc_type="periodic", axis=0)
        s = np.mod(np.asarray(s, dtype=float) - self.t[0], self.period) + self.t[0]
        return cs(s)


def fit_periodic_spline(t, y, lam=None, period=2 * np.pi):
    """Periodic cubic smoothing spline of columns of ``y`` against ``t``.

    All columns share one penalty. With ``lam=None`` it is chosen by
    minimising the pooled GCV score ``n * RSS / (n - tr S)**2``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n = t.size
    k = periodic_roughness_matrix(t, period)
    evals, evecs = linalg.eigh(k)
    evals = np.clip(evals, 0.0, None)
    proj = evecs.T @ y

    def fitted(lam_):
        return evecs @ (proj / (1.0 + lam_ * evals)[:, None])

    def gcv(log_lam):
        lam_ = 10.0 ** log_lam
        shrink = 1.0 / (1.0 + lam_ * evals)
        rss = np.sum(((1.0 - shrink)[:, None] * proj) ** 2)
        denom = (n - shrink.sum()) ** 2
        return n * rss / denom if denom > 0 else np.inf

    if lam is None:
        lo, hi = BOUNDARY_LOG10_LAMBDA
        x, _, _, vals = scan_then_golden(gcv, lo, hi, n_scan=49, tol=1e-3)
        if _is_flat(vals, float(np.mean(np.var(y, axis=0)))):
            lam = 0.0
        else:
            lam = 10.0 ** x
    lam = float(lam)
    if lam < 0:
        raise DataError("smoothing penalty must be nonnegative")
    edf = float(np.sum(1.0 / (1.0 + lam * evals)))
    return PeriodicFit(t=t, fitted=fitted(lam), lam=lam, period=period, edf=edf)


# ---------------------------------------------------------------------------
# penalised regression spline
# ---------------------------------------------------------------------------

def _second_derivative_gram(t_full, breaks, nbasis):
    # B'' is piecewise linear, so 2-point Gauss-Legendre per interval is exact
    gx, gw = np.polynomial.legendre.leggauss(2)
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    xq = (0.5 * (a + b))[:, None] + half[:, None] * gx[None, :]
    wq = half[:, None] * gw[None, :]
    d2 = BSpline(t_full, np.eye(nbasis), 3, extrapolate=False).derivative(2)
    vals = np.nan_to_num(d2(xq.ravel()))
    return (vals * wq.ravel()[:, None]).T @ vals


@dataclass
class PenalizedSpline:
    """Cubic smoothing spline fit; callable, linear outside the data range."""

    spline: BSpline
    lam: float
    edf: float
    gcv: float
    x_min: float
    x_max: float
    n: int
    gcv_flat: bool = False
    info: dict = field(default_factory=dict)

    def __call__(self, x):
        x0 = np.asarray(x, dtype=float)
        x = np.atleast_1d(x0)
        out = self.spline(np.clip(x, self.x_min, self.x_max))
        lo, hi = x < self.x_min, x > self.x_max
        if lo.any():
            slope = self.spline.derivative(1)(self.x_min)
            out[lo] = self.spline(self.x_min) + slope * (x[lo] - self.x_min)
        if hi.any():
            slope = self.spline.derivative(1)(self.x_max)
            out[hi] = self.spline(self.x_max) + slope * (x[hi] - self.x_max)
        return out.reshape(x0.shape)

    @classmethod
    def fit(cls, x, y, lam=None, max_knots=MAX_KNOTS,
            log10_bracket=CURVE_LOG10_LAMBDA, default_lam=DEFAULT_CURVE_LAMBDA):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.shape != y.shape:
            raise DataError("x and y must have the same length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("non-finite values in smoothing input")
        # collapse ties: the penalised criterion only sees per-abscissa
        # means weighted by multiplicity, plus a constant within-tie SS
        ux, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
        if ux.size < 4:
            raise DataError(f"need at least 4 distinct abscissae, got {ux.size}")
        w = counts.astype(float)
        ybar = np.bincount(inv, weights=y) / w
        ss_within = float(np.sum((y - ybar[inv]) ** 2))
        n = x.size

        if ux.size > max_knots:
            knots = ux[np.round(np.linspace(0, ux.size - 1, max_knots)).astype(int)]
        else:
            knots = ux
        t_full = np.r_[[knots[0]] * 3, knots, [knots[-1]] * 3]
        nb = knots.size + 2
        bmat = BSpline.design_matrix(ux, t_full, 3).toarray()
        a = bmat.T @ (w[:, None] * bmat)
        omega = _second_derivative_gram(t_full, knots, nb)
        rhs = bmat.T @ (w * ybar)
        # simultaneous diagonalisation: V'(A+O)V = I, V'AV = diag(mu)
        mu, v = linalg.eigh(a, a + omega)
        mu = np.clip(mu, 0.0, 1.0)
        z = v.T @ rhs

        def coef(lam_):
            return v @ (z / (mu + lam_ * (1.0 - mu)))

        def score(log_lam):
            lam_ = 10.0 ** log_lam
            edf_ = float(np.sum(mu / (mu + lam_ * (1.0 - mu))))
            resid = ybar - bmat @ coef(lam_)
            rss = float(np.sum(w * resid ** 2)) + ss_within
            denom = (n - edf_) ** 2
            return n * rss / denom if denom > 0 else np.inf

        flat = False
        if lam is None:
            lo, hi = log10_bracket
            xbest, gbest, _, vals = scan_then_golden(score, lo, hi, n_scan=41, tol=1e-3)
            if _is_flat(vals, float(np.mean(y ** 2))):
                flat = True
                lam = default_lam
                warnings.warn(
                    f"GCV criterion is flat; using default smoothing penalty {default_lam:g}",
                    BDWarning, stacklevel=2)
            else:
                lam = 10.0 ** xbest
                if xbest - lo < 1e-2 or hi - xbest < 1e-2:
                    warnings.warn(
                        f"GCV optimum at bracket end (lambda={lam:.3g})",
                        BDWarning, stacklevel=2)
        lam = float(lam)
        if lam <= 0:
            raise DataError("smoothing penalty must be positive")
        gcv_value = score(np.log10(lam))
        edf = float(np.sum(mu / (mu + lam * (1.0 - mu))))
        spline = BSpline(t_full, coef(lam), 3, extrapolate=False)
        return cls(spline=spline, lam=lam, edf=edf, gcv=gcv_value,
                   x_min=float(ux[0]), x_max=float(ux[-1]), n=n, gcv_flat=flat,
                   info={"n_knots": int(knots.size), "n_distinct": int(ux.size)})
