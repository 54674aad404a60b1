"""Static SVG figures for pipeline reports.

Figures are rendered to SVG with a fixed hash salt and no date metadata, so
identical inputs give identical files.
"""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fda import pointwise_band  # noqa: E402
from .plm import PARAMETERS  # noqa: E402
from .profiles import GRID  # noqa: E402

_RC = {"svg.hashsalt": "bdplot", "svg.fonttype": "none", "font.size": 9}


def _svg(fig):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def _boundary_line(ax):
    ax.axvline(1.0, color="0.6", lw=0.8, ls=":")


def mean_curves(groups):
    """Group means with pointwise 95% normal bands. ``groups``: label -> curves."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for label, curves in groups.items():
            m, lo, hi = pointwise_band(curves)
            (line,) = ax.plot(GRID, m, lw=1.4, label=f"{label} (n={len(curves)})")
            ax.fill_between(GRID, lo, hi, color=line.get_color(), alpha=0.25, lw=0)
        _boundary_line(ax)
        ax.set_xlabel("boundary distance")
        ax.set_ylabel("scaled expression")
        ax.legend(frameon=False)
        return _svg(fig)


def tcurve(test):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(GRID, test.t, color="k", lw=1.4, label="T(r)")
        for s in (-1, 1):
            ax.axhline(s * test.critical, color="C3", ls="--", lw=1)
        for a, b in test.significant_regions:
            ax.axvspan(a - 0.005, b + 0.005, color="C3", alpha=0.15, lw=0)
        _boundary_line(ax)
        ax.set_xlabel("boundary distance")
        ax.set_ylabel("t statistic")
        ax.set_title(f"simultaneous {100 * test.level:g}% band, n_perm={test.n_perm}")
        return _svg(fig)


def discriminant(model):
    with plt.rc_context(_RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2),
                                       gridspec_kw={"width_ratios": [2, 1]})
        ax1.plot(GRID, model.d_p, color="k", lw=1.2)
        ax1.axhline(0, color="0.6", lw=0.6)
        _boundary_line(ax1)
        ax1.set_xlabel("boundary distance")
        ax1.set_ylabel("discriminant coefficient")
        rng = np.random.default_rng(0)
        for lab, name in ((1, "A"), (0, "C")):
            sel = model.labels == lab
            ax2.scatter(np.full(sel.sum(), 1 - lab) + rng.uniform(-0.15, 0.15, sel.sum()),
                        model.scores[sel], s=10, label=name)
        ax2.axhline(model.tau, color="C3", ls="--", lw=1)
        ax2.set_xticks([0, 1])
        ax2.set_xticklabels(["A", "C"])
        ax2.set_ylabel("score")
        ax2.set_title(f"lambda={model.lambda_ridge:.2g}, tau={model.tau:.2f}")
        return _svg(fig)


def parameter_panels(fits_a, fits_c, labels=("A", "C")):
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(2, 4, figsize=(9, 4.5))
        for ax, name in zip(axes.ravel(), PARAMETERS):
            data = [[f.params()[name] for f in fits_a], [f.params()[name] for f in fits_c]]
            ax.boxplot(data, widths=0.5)
            ax.set_xticks([1, 2])
            ax.set_xticklabels(labels)
            ax.set_title(name)
        fig.tight_layout()
        return _svg(fig)
