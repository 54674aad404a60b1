"""Pointwise t-statistic curves with permutation-calibrated simultaneous bands."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BDWarning, DataError
from .profiles import GRID

DEFAULT_LEVEL = 0.95
MIN_PERM = 1000


@dataclass
class TestCurve:
    """Observed t curve, its simultaneous critical level and the regions beyond it."""

    __test__ = False  # not a pytest class

    t: np.ndarray
    critical: float
    n_perm: int
    design: str
    level: float
    seed: int | None
    significant_regions: list
    p_value: float
    exact: bool = False
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros(GRID.size, dtype=bool))

    def to_dict(self):
        return {
            "design": self.design,
            "r": [float(r) for r in GRID],
            "t": [float(v) for v in self.t],
            "critical": float(self.critical),
            "level": float(self.level),
            "n_perm": int(self.n_perm),
            "exact_enumeration": bool(self.exact),
            "seed": self.seed,
            "p_value": float(self.p_value),
            "significant_regions": [[float(a), float(b)] for a, b in self.significant_regions],
            "degenerate_points": [float(r) for r in GRID[self.degenerate]],
        }


def _as_matrix(curves):
    if isinstance(curves, np.ndarray):
        x = np.asarray(curves, dtype=float)
    else:
        x = np.array([getattr(c, "values", c) for c in curves], dtype=float)
    if x.ndim != 2:
        raise DataError("curves must form a 2-d (n_curves, n_points) array")
    return x


def _degenerate_floor(x):
    return 1e-24 + 1e-20 * float(np.max(x ** 2)) if x.size else 1e-24


def _welch_t(mean_a, var_a, n_a, mean_c, var_c, n_c, floor):
    denom = var_c / n_c + var_a / n_a
    bad = denom <= floor
    t = np.where(bad, 0.0, (mean_c - mean_a) / np.sqrt(np.where(bad, 1.0, denom)))
    return t, bad


def _tcurve(a, c):
    pooled = np.vstack([a, c])
    centre = pooled.mean(axis=0)
    a, c = a - centre, c - centre
    floor = _degenerate_floor(pooled - centre)
    return _welch_t(a.mean(0), a.var(0, ddof=1), len(a), c.mean(0), c.var(0, ddof=1), len(c), floor)


def two_sample_tcurve(group_a, group_c):
    """Pointwise two-sample statistic ``(mu_C - mu_A) / sqrt(s_C^2/n_C + s_A^2/n_A)``.

    Grid points where both groups have zero variance get ``T = 0`` and a
    :class:`~bdplot.errors.BDWarning`.
    """
    a, c = _as_matrix(group_a), _as_matrix(group_c)
    if len(a) < 2 or len(c) < 2:
        raise DataError("each group needs at least 2 curves")
    t, bad = _tcurve(a, c)
    if bad.any():
        warnings.warn(f"zero pooled variance at {int(bad.sum())} grid point(s); T set to 0",
                      BDWarning, stacklevel=2)
    return t


def _membership_batches(n_a, n_total, n_perm, rng):
    """Indicator matrix (n_splits, n_total) of group-A membership."""
    n_splits = math.comb(n_total, n_a)
    if n_splits <= n_perm:
        m = np.zeros((n_splits, n_total))
        for i, combo in enumerate(itertools.combinations(range(n_total), n_a)):
            m[i, list(combo)] = 1.0
        return m, True
    perms = rng.permuted(np.tile(np.arange(n_total), (n_perm, 1)), axis=1)
    m = np.zeros((n_perm, n_total))
    np.put_along_axis(m, perms[:, :n_a], 1.0, axis=1)
    return m, False


def _sup_two_sample(pooled, member, n_a, floor, chunk=2000):
    n_c = pooled.shape[0] - n_a
    total = pooled.sum(0)
    total_sq = (pooled ** 2).sum(0)
    out = np.empty(len(member))
    for s in range(0, len(member), chunk):
        m = member[s:s + chunk]
        sum_a = m @ pooled
        sq_a = m @ (pooled ** 2)
        sum_c, sq_c = total - sum_a, total_sq - sq_a
        mean_a, mean_c = sum_a / n_a, sum_c / n_c
        var_a = np.maximum(sq_a - n_a * mean_a ** 2, 0.0) / (n_a - 1)
        var_c = np.maximum(sq_c - n_c * mean_c ** 2, 0.0) / (n_c - 1)
        t, _ = _welch_t(mean_a, var_a, n_a, mean_c, var_c, n_c, floor)
        out[s:s + chunk] = np.abs(t).max(axis=1)
    return out


def _check_perm(n_perm, level):
    if n_perm < MIN_PERM:
        raise DataError(f"n_perm must be at least {MIN_PERM}")
    if not 0.5 < level < 1.0:
        raise DataError("level must lie in (0.5, 1)")


def _critical(sups, level):
    return float(np.quantile(sups, level, method="higher"))


def permutation_suprema(group_a, group_c, n_perm=5000, seed=0):
    """Null distribution of ``sup_r |T(r)|`` under random regrouping.

    Splits are drawn without replacement within a replicate; when the number
    of distinct splits does not exceed ``n_perm`` they are enumerated instead.
    Returns ``(suprema, exact)``.
    """
    a, c = _as_matrix(group_a), _as_matrix(group_c)
    if len(a) < 2 or len(c) < 2:
        raise DataError("each group needs at least 2 curves")
    pooled = np.vstack([a, c])
    pooled = pooled - pooled.mean(axis=0)
    rng = np.random.default_rng(np.random.Philox(key=int(seed)))
    member, exact = _membership_batches(len(a), len(pooled), int(n_perm), rng)
    if exact:
        warnings.warn(f"only {len(member)} distinct splits; enumerating them exactly",
                      BDWarning, stacklevel=3)
    return _sup_two_sample(pooled, member, len(a), _degenerate_floor(pooled)), exact


def permutation_band(group_a, group_c, n_perm=5000, level=DEFAULT_LEVEL, seed=0):
    """Simultaneous critical level for ``|T|``: the ``level`` quantile of the
    permutation distribution of ``sup |T|``."""
    _check_perm(n_perm, level)
    sups, _ = permutation_suprema(group_a, group_c, n_perm, seed)
    return _critical(sups, level)


def significant_regions(t, critical):
    """Maximal runs of grid points with ``|t| > critical`` as ``(r_start, r_end)``."""
    above = np.abs(np.asarray(t)) > critical
    regions = []
    i = 0
    while i < above.size:
        if above[i]:
            j = i
            while j + 1 < above.size and above[j + 1]:
                j += 1
            regions.append((float(GRID[i]), float(GRID[j])))
            i = j + 1
        else:
            i += 1
    return regions


def _p_value(sups, observed, exact):
    ge = int(np.sum(sups >= observed - 1e-12 * max(1.0, observed)))
    if exact:
        return ge / len(sups)
    return (ge + 1) / (len(sups) + 1)


def two_sample_test(group_a, group_c, n_perm=5000, level=DEFAULT_LEVEL, seed=0):
    """Observed T curve plus its permutation band, as a :class:`TestCurve`."""
    _check_perm(n_perm, level)
    a, c = _as_matrix(group_a), _as_matrix(group_c)
    if len(a) < 2 or len(c) < 2:
        raise DataError("each group needs at least 2 curves")
    t, bad = _tcurve(a, c)
    if bad.any():
        warnings.warn(f"zero pooled variance at {int(bad.sum())} grid point(s); T set to 0",
                      BDWarning, stacklevel=2)
    sups, exact = permutation_suprema(a, c, n_perm, seed)
    crit = _critical(sups, level)
    obs = float(np.abs(t).max())
    return TestCurve(t=t, critical=crit, n_perm=int(n_perm), design="unpaired", level=level,
                     seed=seed, significant_regions=significant_regions(t, crit),
                     p_value=_p_value(sups, obs, exact), exact=exact, degenerate=bad)


def _paired_t(d, floor):
    n = d.shape[-2]
    mean = d.mean(axis=-2)
    var = d.var(axis=-2, ddof=1)
    bad = var / n <= floor
    t = np.where(bad, 0.0, mean / np.sqrt(np.where(bad, 1.0, var) / n))
    return t, bad


def paired_tcurve(pairs):
    """Pointwise one-sample t statistic of the within-cell differences Y - R."""
    d = _differences(pairs)
    t, bad = _paired_t(d, _degenerate_floor(d))
    if bad.any():
        warnings.warn(f"zero variance of differences at {int(bad.sum())} grid point(s); T set to 0",
                      BDWarning, stacklevel=2)
    return t


def _differences(pairs):
    if isinstance(pairs, np.ndarray):
        arr = np.asarray(pairs, dtype=float)
        if arr.ndim != 3 or arr.shape[1] != 2:
            raise DataError("paired array must have shape (n_cells, 2, n_points)")
        return arr[:, 0] - arr[:, 1]
    ys = _as_matrix([p[0] for p in pairs])
    rs = _as_matrix([p[1] for p in pairs])
    return ys - rs


def _sign_patterns(n, n_perm, rng):
    if 2 ** n <= n_perm:
        grid = np.array(list(itertools.product((1.0, -1.0), repeat=n)))
        return grid, True
    return rng.choice(np.array([1.0, -1.0]), size=(n_perm, n)), False


def paired_tcurve_and_band(pairs, n_perm=5000, level=DEFAULT_LEVEL, seed=0):
    """Paired t curve with a restricted-randomisation band.

    Each replicate independently swaps the two channel labels within every
    cell with probability 1/2 (a sign flip of that cell's difference curve).
    When ``2**n_cells <= n_perm`` all sign patterns are enumerated.
    """
    _check_perm(n_perm, level)
    d = _differences(pairs)
    if len(d) < 3:
        raise DataError("paired test needs at least 3 pairs")
    floor = _degenerate_floor(d)
    t, bad = _paired_t(d, floor)
    if bad.any():
        warnings.warn(f"zero variance of differences at {int(bad.sum())} grid point(s); T set to 0",
                      BDWarning, stacklevel=2)
    rng = np.random.default_rng(np.random.Philox(key=int(seed)))
    signs, exact = _sign_patterns(len(d), int(n_perm), rng)
    sups = np.empty(len(signs))
    for s in range(0, len(signs), 1000):
        flipped = signs[s:s + 1000, :, None] * d[None, :, :]
        tt, _ = _paired_t(flipped, floor)
        sups[s:s + 1000] = np.abs(tt).max(axis=1)
    crit = _critical(sups, level)
    obs = float(np.abs(t).max())
    return TestCurve(t=t, critical=crit, n_perm=int(n_perm), design="paired", level=level,
                     seed=seed, significant_regions=significant_regions(t, crit),
                     p_value=_p_value(sups, obs, exact), exact=exact, degenerate=bad)


def pointwise_band(curves, z=1.96):
    """Mean curve with pointwise normal-approximation bands (for plots)."""
    x = _as_matrix(curves)
    m = x.mean(0)
    se = x.std(0, ddof=1) / np.sqrt(len(x)) if len(x) > 1 else np.zeros_like(m)
    return m, m - z * se, m + z * se

