"""Ridge-penalised Fisher discriminant with leave-one-out (lambda, tau) selection.

Decision rule: a curve ``g`` is assigned to group A when its score exceeds
``tau``. Scores come in two flavours:

``"midpoint"`` (default)
    ``1 + (d'g - m) / h`` with ``m = d'(mu_A + mu_C)/2`` and
    ``h = d'(mu_A - mu_C)/2`` computed from the training curves, so the group
    means score 2 (A) and 0 (C) and ``tau = 1`` is Fisher's midpoint rule.
``"raw"``
    the bare projection ``d'g``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DataError, NumericalError

LAMBDA_GRID = np.logspace(-4, -1, 10)
TAU_GRID = np.linspace(0.5, 1.5, 10)
SCORE_MODES = ("midpoint", "raw")


def _as_matrix(curves):
    x = np.array([getattr(c, "values", c) for c in curves], dtype=float)
    if x.ndim != 2:
        raise DataError("curves must form a 2-d (n_curves, n_points) array")
    return x


def pooled_within_covariance(group_a, group_c):
    """``W = 0.5 * Sigma_A + 0.5 * Sigma_C`` with divisor ``n_g - 1`` per group."""
    a, c = _as_matrix(group_a), _as_matrix(group_c)
    if len(a) < 2 or len(c) < 2:
        raise DataError("each group needs at least 2 curves")
    return 0.5 * np.cov(a, rowvar=False, ddof=1) + 0.5 * np.cov(c, rowvar=False, ddof=1)


def fit_discriminant(group_a, group_c, lambda_ridge):
    """Solve ``(W + lambda I) d = mu_A - mu_C`` for the penalised discriminant."""
    if not lambda_ridge > 0:
        raise DataError("ridge penalty must be positive")
    a, c = _as_matrix(group_a), _as_matrix(group_c)
    wp = pooled_within_covariance(a, c) + lambda_ridge * np.eye(a.shape[1])
    try:
        return linalg.solve(wp, a.mean(0) - c.mean(0), assume_a="pos")
    except linalg.LinAlgError as exc:  # pragma: no cover - SPD + lambda I
        raise NumericalError(f"discriminant solve failed at lambda={lambda_ridge:g}") from exc


@dataclass
class DiscriminantModel:
    d_p: np.ndarray
    lambda_ridge: float
    tau: float
    cv_errors: int
    cv_rate: float
    scores: np.ndarray
    labels: np.ndarray  # 1 = group A, 0 = group C
    cv_surface: np.ndarray  # (n_lambda, n_tau) misclassification counts
    lambda_grid: np.ndarray
    tau_grid: np.ndarray
    loo_scores: np.ndarray  # (n_lambda, n_curves)
    score_mode: str = "midpoint"
    ids: list = field(default_factory=list)

    def predict(self, curves):
        return (self.score(curves) > self.tau).astype(int)

    def score(self, curves):
        x = _as_matrix(curves)
        return _score(x, self.d_p, self._centre, self._half, self.score_mode)

    def to_dict(self):
        best = int(np.flatnonzero(np.isclose(self.lambda_grid, self.lambda_ridge))[0])
        loo = self.loo_scores[best]
        return {
            "lambda": float(self.lambda_ridge),
            "tau": float(self.tau),
            "score_mode": self.score_mode,
            "cv_errors": int(self.cv_errors),
            "cv_rate": float(self.cv_rate),
            "n_curves": int(self.labels.size),
            "d_p": [float(v) for v in self.d_p],
            "lambda_grid": [float(v) for v in self.lambda_grid],
            "tau_grid": [float(v) for v in self.tau_grid],
            "cv_surface": self.cv_surface.astype(int).tolist(),
            "curves": [
                {"id": str(self.ids[i]) if self.ids else i, "group": "A" if self.labels[i] else "C",
                 "fold": i, "score": float(self.scores[i]), "loo_score": float(loo[i]),
                 "loo_assigned": "A" if loo[i] > self.tau else "C"}
                for i in range(self.labels.size)
            ],
        }


def _score(x, d, centre, half, mode):
    raw = x @ d
    if mode == "raw":
        return raw
    return 1.0 + (raw - centre) / half


def _score_params(a_mean, c_mean, d):
    centre = 0.5 * float(d @ (a_mean + c_mean))
    half = 0.5 * float(d @ (a_mean - c_mean))
    return centre, half


def _select(surface, lambda_grid, tau_grid):
    # fewest errors, then larger lambda, then tau nearest 1, then smaller tau
    best = None
    for i, lam in enumerate(lambda_grid):
        for j, tau in enumerate(tau_grid):
            key = (surface[i, j], -lam, abs(tau - 1.0), tau)
            if best is None or key < best[0]:
                best = (key, i, j)
    return best[1], best[2]


def loocv_select(group_a, group_c, lambda_grid=LAMBDA_GRID, tau_grid=TAU_GRID,
                 score_mode="midpoint", ids=None):
    """Joint leave-one-out choice of ridge penalty and threshold.

    Every curve is held out in turn, the discriminant refit on the rest for
    each ``lambda``, and the held-out score compared with each ``tau``.
    The pair with fewest misclassifications wins (ties: larger ``lambda``,
    then ``tau`` nearest 1); the returned model is refit on all curves.
    """
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    tau_grid = np.asarray(tau_grid, dtype=float)
    if lambda_grid.size == 0 or tau_grid.size == 0:
        raise DataError("lambda and tau grids must be non-empty")
    if np.any(lambda_grid <= 0):
        raise DataError("ridge penalties must be positive")
    if score_mode not in SCORE_MODES:
        raise DataError(f"score_mode must be one of {SCORE_MODES}")
    a, c = _as_matrix(group_a), _as_matrix(group_c)
    x = np.vstack([a, c])
    labels = np.r_[np.ones(len(a), dtype=int), np.zeros(len(c), dtype=int)]
    n = len(x)
    if n < 6:
        raise DataError("LOOCV needs at least 6 curves in total")
    if len(a) < 3 or len(c) < 3:
        raise DataError("LOOCV needs at least 3 curves per group")

    loo = np.empty((lambda_grid.size, n))
    for i in range(n):
        keep = np.arange(n) != i
        xa, xc = x[keep & (labels == 1)], x[keep & (labels == 0)]
        w = pooled_within_covariance(xa, xc)
        evals, evecs = linalg.eigh(w)
        evals = np.clip(evals, 0.0, None)
        diff = xa.mean(0) - xc.mean(0)
        proj = evecs.T @ diff
        for li, lam in enumerate(lambda_grid):
            d = evecs @ (proj / (evals + lam))
            centre, half = _score_params(xa.mean(0), xc.mean(0), d)
            loo[li, i] = _score(x[i], d, centre, half, score_mode)

    assigned = loo[:, None, :] > tau_grid[None, :, None]
    surface = np.sum(assigned != labels[None, None, :].astype(bool), axis=2)
    li, ti = _select(surface, lambda_grid, tau_grid)
    lam, tau = float(lambda_grid[li]), float(tau_grid[ti])

    d = fit_discriminant(a, c, lam)
    centre, half = _score_params(a.mean(0), c.mean(0), d)
    model = DiscriminantModel(
        d_p=d, lambda_ridge=lam, tau=tau, cv_errors=int(surface[li, ti]),
        cv_rate=float(surface[li, ti]) / n, scores=_score(x, d, centre, half, score_mode),
        labels=labels, cv_surface=surface, lambda_grid=lambda_grid, tau_grid=tau_grid,
        loo_scores=loo, score_mode=score_mode, ids=list(ids) if ids is not None else [])
    model._centre, model._half = centre, half
    return model
