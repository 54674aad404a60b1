"""Bracketed 1-d minimisation used by GCV and the dilation line searches."""
import math

import numpy as np

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f, lo, hi, tol=1e-4):
    """Golden-section search for a minimum of ``f`` on ``[lo, hi]``.

    Returns ``(x, f(x))`` for the best point evaluated.
    """
    a, b = float(lo), float(hi)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def scan_then_golden(f, lo, hi, n_scan=61, tol=1e-4, f_vec=None):
    """Coarse grid scan followed by golden-section refinement.

    The scan guards against the local minima a bare golden search can
    settle into. ``f_vec`` optionally evaluates the whole scan grid at once.
    Returns ``(x, fx, grid, values)``.
    """
    grid = np.linspace(lo, hi, n_scan)
    if f_vec is not None:
        values = np.asarray(f_vec(grid), dtype=float)
    else:
        values = np.array([f(x) for x in grid])
    i = int(np.argmin(values))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, n_scan - 1)]
    x, fx = golden_section(f, a, b, tol)
    if values[i] < fx:
        x, fx = grid[i], values[i]
    return x, fx, grid, values
