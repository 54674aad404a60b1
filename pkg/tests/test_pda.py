import numpy as np
import pytest
from hypothesis import given, strategies as st

from bdplot.errors import DataError
from bdplot.pda import (LAMBDA_GRID, TAU_GRID, fit_discriminant, loocv_select,
                        pooled_within_covariance)
from bdplot.profiles import GRID
from conftest import smooth_random_curves


def naive_covariance(x):
    n, p = x.shape
    m = x.mean(0)
    out = np.zeros((p, p))
    for i in range(p):
        for j in range(p):
            out[i, j] = sum((x[k, i] - m[i]) * (x[k, j] - m[j]) for k in range(n)) / (n - 1)
    return out


def test_pooled_covariance_naive_oracle():
    rng = np.random.default_rng(0)
    a, c = rng.normal(size=(5, 10)), rng.normal(size=(5, 10))
    w = pooled_within_covariance(a, c)
    assert np.allclose(w, 0.5 * naive_covariance(a) + 0.5 * naive_covariance(c), atol=1e-12)


def test_pooled_covariance_trivial_cases():
    const = np.ones((3, 200))
    assert np.all(pooled_within_covariance(const, 2 * const) == 0)
    a = np.zeros((2, 200))
    a[1, 0] = 1.0
    w = pooled_within_covariance(a, a.copy())
    assert w[0, 0] > 0
    w[0, 0] = 0
    assert np.all(w == 0)
    with pytest.raises(DataError):
        pooled_within_covariance(a[:1], a)


def _identity_cov_group(mu, k=19 / 2):
    p = mu.size
    dev = np.sqrt(k) * np.vstack([np.eye(p), -np.eye(p)])
    return mu + dev


def test_identity_within_covariance_closed_form():
    rng = np.random.default_rng(1)
    mu_a, mu_c = rng.normal(size=10), rng.normal(size=10)
    a, c = _identity_cov_group(mu_a), _identity_cov_group(mu_c)
    assert np.allclose(pooled_within_covariance(a, c), np.eye(10))
    for lam in (1e-3, 0.1, 2.0):
        assert np.allclose(fit_discriminant(a, c, lam), (mu_a - mu_c) / (1 + lam), atol=1e-12)


def test_ridge_limit_direction():
    rng = np.random.default_rng(2)
    a, c = rng.normal(size=(6, 30)), rng.normal(0.3, 1, size=(6, 30))
    d = fit_discriminant(a, c, 1e9)
    diff = a.mean(0) - c.mean(0)
    cosang = d @ diff / np.linalg.norm(d) / np.linalg.norm(diff)
    assert np.arccos(min(cosang, 1.0)) < 1e-6


@given(st.integers(0, 10 ** 6), st.floats(1e-4, 1e-1))
def test_solve_matches_dense_oracle(seed, lam):
    rng = np.random.default_rng(seed)
    a, c = rng.normal(size=(5, 10)), rng.normal(size=(6, 10))
    w = 0.5 * np.cov(a, rowvar=False) + 0.5 * np.cov(c, rowvar=False)
    ref = np.linalg.inv(w + lam * np.eye(10)) @ (a.mean(0) - c.mean(0))
    assert np.allclose(fit_discriminant(a, c, lam), ref, rtol=1e-10, atol=1e-10)


def test_nonpositive_lambda_rejected():
    a = np.random.default_rng(0).normal(size=(4, 10))
    with pytest.raises(DataError):
        fit_discriminant(a, a + 1, 0.0)


def test_spd_margin_on_every_lambda():
    rng = np.random.default_rng(3)
    a, c = smooth_random_curves(8, rng), smooth_random_curves(8, rng)
    w = pooled_within_covariance(a, c)
    for lam in LAMBDA_GRID:
        assert np.linalg.eigvalsh(w + lam * np.eye(200)).min() >= lam * (1 - 1e-9)


def test_separable_groups_zero_cv_error():
    rng = np.random.default_rng(4)
    a = smooth_random_curves(10, rng, amp=0.05) + 0.5
    c = smooth_random_curves(10, rng, amp=0.05)
    m = loocv_select(a, c)
    assert m.cv_errors == 0 and m.cv_rate == 0
    assert m.cv_surface.shape == (10, 10)
    assert m.cv_errors == m.cv_surface.min()
    # tie rule: largest lambda among the error-free cells
    assert m.lambda_ridge == LAMBDA_GRID[-1]


def test_loocv_matches_naive_refits():
    rng = np.random.default_rng(5)
    a, c = smooth_random_curves(4, rng, amp=0.3), smooth_random_curves(4, rng, amp=0.3) + 0.05
    m = loocv_select(a, c)
    x = np.vstack([a, c])
    labels = np.r_[np.ones(4), np.zeros(4)]
    for li, lam in enumerate(LAMBDA_GRID):
        for i in range(8):
            keep = np.arange(8) != i
            xa, xc = x[keep & (labels == 1)], x[keep & (labels == 0)]
            d = fit_discriminant(xa, xc, lam)
            centre = 0.5 * d @ (xa.mean(0) + xc.mean(0))
            half = 0.5 * d @ (xa.mean(0) - xc.mean(0))
            assert m.loo_scores[li, i] == pytest.approx(1 + (x[i] @ d - centre) / half, rel=1e-7)
    errors = np.array([[np.sum((m.loo_scores[li] > t) != labels.astype(bool)) for t in TAU_GRID]
                       for li in range(10)])
    assert np.array_equal(errors, m.cv_surface)


def test_loocv_deterministic_and_validated():
    rng = np.random.default_rng(6)
    a, c = smooth_random_curves(5, rng), smooth_random_curves(5, rng)
    m1, m2 = loocv_select(a, c), loocv_select(a, c)
    assert (m1.lambda_ridge, m1.tau, m1.cv_errors) == (m2.lambda_ridge, m2.tau, m2.cv_errors)
    with pytest.raises(DataError):
        loocv_select(a, c, lambda_grid=[])
    with pytest.raises(DataError):
        loocv_select(a, c, tau_grid=[])
    with pytest.raises(DataError):
        loocv_select(a[:2], c[:3])


def test_threshold_scale_covariance():
    """Scaling curves by c and ridge by c**2 multiplies raw scores by a computed factor."""
    rng = np.random.default_rng(7)
    a, c = smooth_random_curves(6, rng) + 0.1, smooth_random_curves(6, rng)
    k = 3.0
    base = loocv_select(a, c, score_mode="raw", tau_grid=np.linspace(-2, 2, 10))
    d1 = fit_discriminant(a, c, 0.01)
    dk = fit_discriminant(k * a, k * c, 0.01 * k ** 2)
    factor = float((dk @ (k * a[0])) / (d1 @ a[0]))
    assert np.allclose(dk @ (k * a.T), factor * (d1 @ a.T))
    scaled = loocv_select(k * a, k * c, lambda_grid=LAMBDA_GRID * k ** 2, score_mode="raw",
                          tau_grid=factor * np.linspace(-2, 2, 10))
    assert np.array_equal(base.cv_surface, scaled.cv_surface)
    assert base.tau * factor == pytest.approx(scaled.tau)
    # standardised scores need no threshold rescaling
    mid1 = loocv_select(a, c)
    mid2 = loocv_select(k * a, k * c, lambda_grid=LAMBDA_GRID * k ** 2)
    assert np.allclose(mid1.loo_scores, mid2.loo_scores)


def test_discriminant_concentrates_on_difference_zone():
    rng = np.random.default_rng(8)
    zone = (GRID > 0.9) & (GRID < 1.1)
    a = smooth_random_curves(15, rng, amp=0.1) - 0.3 * zone
    c = smooth_random_curves(15, rng, amp=0.1)
    m = loocv_select(a, c)
    top = np.argsort(np.abs(m.d_p))[-10:]
    assert np.all((GRID[top] > 0.85) & (GRID[top] < 1.15))


def test_report_fields():
    rng = np.random.default_rng(9)
    a, c = smooth_random_curves(4, rng) + 0.3, smooth_random_curves(4, rng)
    d = loocv_select(a, c, ids=list("abcdefgh")).to_dict()
    assert len(d["d_p"]) == 200 and len(d["cv_surface"]) == 10
    assert {"lambda", "tau", "cv_errors", "cv_rate", "curves"} <= set(d)
    assert d["curves"][0]["id"] == "a" and d["curves"][5]["group"] == "C"
