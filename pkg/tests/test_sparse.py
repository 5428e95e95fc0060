import math

import numpy as np
import pytest

from heritml.core import IntervalKind, Method
from heritml.sparse import (
    LOG_HALF,
    PenaltySpec,
    cv_lambda,
    cv_path,
    elastic_net_fit,
    enet_heritability,
    enet_objective,
    enet_path,
    enet_solve,
    fold_ids,
    kkt_residual,
    lambda_grid,
    lambda_max,
    scaled_lasso,
    slasso_heritability,
)


def centered(rng, n, p):
    X = rng.standard_normal((n, p))
    return X - X.mean(axis=0)


def soft(g, t):
    return np.sign(g) * np.maximum(np.abs(g) - t, 0.0)


# -------------------------------------------------------------- solver


def test_orthonormal_lasso_is_soft_threshold(rng):
    n, p = 60, 12
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    X = math.sqrt(n) * Q  # X'X/n = I
    y = X @ rng.normal(0, 1, p) + rng.standard_normal(n)
    for lam in (0.05, 0.3, 1.0):
        b = enet_solve(X, y, lam, 1.0).beta
        np.testing.assert_allclose(b, soft(X.T @ y / n, lam), atol=1e-8)


def test_ridge_closed_form(rng):
    n, p = 50, 10
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    lam = 0.4
    want = np.linalg.solve(X.T @ X / n + lam * np.eye(p), X.T @ y / n)
    np.testing.assert_allclose(enet_solve(X, y, lam, 0.0, kkt_tol=1e-12).beta, want, atol=1e-8)


def test_null_threshold(rng):
    X = centered(rng, 40, 30)
    y = rng.standard_normal(40)
    for a in (1.0, 0.5):
        lm = lambda_max(X, y, a)
        assert not enet_solve(X, y, lm, a).beta.any()
        assert enet_solve(X, y, 0.9 * lm, a).beta.any()


def test_sweeps_never_increase_objective():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, p = int(rng.integers(10, 40)), int(rng.integers(5, 60))
        X = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        a = float(rng.choice([0.0, 0.01, 0.5, 1.0]))
        lam = float(rng.uniform(0.05, 1.0)) * max(lambda_max(X, y, a), 1e-3)
        sol = enet_solve(X, y, lam, a, trace=True)
        tr = sol.trace
        assert tr.size > 0
        start = enet_objective(X, y, np.zeros(p), lam, a)
        seq = np.concatenate([[start], tr])
        assert np.all(np.diff(seq) <= 1e-12 * max(1.0, abs(start)))


def test_kkt_certified(rng):
    X = centered(rng, 50, 200)
    y = X[:, :4] @ np.array([2.0, -1.0, 1.0, 0.5]) + rng.standard_normal(50)
    for a in (0.01, 0.5, 1.0):
        lam = 0.05 * lambda_max(X, y, a)
        sol = enet_solve(X, y, lam, a)
        assert sol.converged
        assert kkt_residual(X, y, sol.beta, lam, a) <= 1e-6


def test_warm_equals_cold(rng):
    X = centered(rng, 40, 80)
    y = X[:, :3].sum(axis=1) + rng.standard_normal(40)
    grid = lambda_grid(X, y, 0.5, 15, ratio=0.05)
    warm = None
    for lam in grid:
        warm = enet_solve(X, y, lam, 0.5, beta0=warm, kkt_tol=1e-11).beta
        cold = enet_solve(X, y, lam, 0.5, kkt_tol=1e-11).beta
        np.testing.assert_allclose(warm, cold, atol=1e-8)


def test_path_agrees_with_single_fits(rng):
    X = centered(rng, 30, 50)
    y = rng.standard_normal(30)
    grid = lambda_grid(X, y, 1.0, 10, ratio=0.1)
    B = enet_path(X, y, grid, 1.0, tol=1e-14)
    for lam, row in zip(grid, B):
        np.testing.assert_allclose(row, enet_solve(X, y, lam, 1.0, kkt_tol=1e-10).beta, atol=1e-6)


def test_penalty_spec_validation():
    with pytest.raises(ValueError):
        PenaltySpec(alpha_mix=1.5)
    with pytest.raises(ValueError):
        PenaltySpec(lam=-1.0)
    assert PenaltySpec(lam=0.2).lam == 0.2


def test_fixed_lambda_fit(rng):
    X = centered(rng, 40, 20)
    y = 3 * X[:, 0] + rng.standard_normal(40)
    beta = elastic_net_fit(X, y, PenaltySpec(alpha_mix=1.0, lam=0.5))
    assert 0 in beta.support


# ------------------------------------------------------------------ CV


def test_grid_shape(rng):
    X = centered(rng, 30, 40)
    y = rng.standard_normal(30)
    g = lambda_grid(X, y, 0.0)
    assert g.size == 100
    assert g[0] == pytest.approx(np.abs(X.T @ y).max() / (30 * 1e-3))
    assert g[-1] == pytest.approx(1e-3 * g[0])


def test_folds_are_balanced_and_seeded():
    a = fold_ids(23, 10, 4)
    np.testing.assert_array_equal(a, fold_ids(23, 10, 4))
    counts = np.bincount(a)
    assert counts.size == 10 and counts.max() - counts.min() <= 1


def test_cv_noise_picks_large_lambda():
    rng = np.random.default_rng(0)
    for r in range(10):
        X = centered(rng, 100, 200)
        y = rng.standard_normal(100)
        y -= y.mean()
        cv = cv_path(X, y, 1.0, 10, r)
        assert cv.lam >= 0.5 * cv.lambdas[0]


def test_cv_single_strong_signal(rng):
    X = centered(rng, 200, 100)
    y = 3 * X[:, 7] + rng.standard_normal(200)
    y -= y.mean()
    cv = cv_path(X, y, 1.0, 10, 1)
    assert cv.lam < cv.lambdas[0]
    beta = elastic_net_fit(X, y, PenaltySpec(alpha_mix=1.0), rng=1)
    assert 7 in beta.support


def test_cv_deterministic(rng):
    X = centered(rng, 60, 90)
    y = X[:, :5].sum(axis=1) + rng.standard_normal(60)
    assert cv_lambda(X, y, 0.5, rng=3) == cv_lambda(X, y, 0.5, rng=3)


# -------------------------------------------------------- enet estimator


def test_enet_signal_identity(rng):
    X = centered(rng, 80, 150)
    y = X[:, :10].sum(axis=1) + rng.standard_normal(80)
    y -= y.mean()
    est = enet_heritability(X, y, 0.5, rng=0)
    assert est.method is Method.ENET and est.interval is None
    d = est.diagnostics
    from heritml.sparse import _fit_at

    cv = cv_path(X, y, 0.5, 10, 0)
    beta = _fit_at(X, y, cv.lam, 0.5, cv.lambdas, 1e-6).beta
    S = np.flatnonzero(beta)
    Xs = X[:, S] - X[:, S].mean(axis=0)
    quad = beta[S] @ (Xs.T @ Xs / 79) @ beta[S]
    assert d["signal_var"] == pytest.approx(quad, rel=1e-10)
    assert d["support_size"] == S.size


def test_enet_empty_support(rng):
    X = centered(rng, 50, 60)
    y = rng.standard_normal(50) * 1e-3
    y -= y.mean()
    # alpha 1 on pure noise: CV regularly picks the null model
    ests = [enet_heritability(X, y, 1.0, rng=r) for r in range(5)]
    empty = [e for e in ests if e.diagnostics.get("empty_support")]
    assert all(e.h2 == 0.0 for e in empty)


# ---------------------------------------------------------- scaled lasso


def test_scaled_lasso_noise():
    rng = np.random.default_rng(7)
    X = centered(rng, 300, 1000)
    y = rng.standard_normal(300)
    y -= y.mean()
    fit = scaled_lasso(X, y)
    assert abs(fit.sigma_hat - 1) <= 0.15
    assert fit.beta.k <= 5


def test_scaled_lasso_fixed_point_and_equivariance(rng):
    X = centered(rng, 80, 200)
    y = X[:, :5] @ np.array([1.0, -1.0, 0.5, 2.0, 1.0]) + rng.standard_normal(80)
    y -= y.mean()
    fit = scaled_lasso(X, y)
    assert fit.converged
    r = y - X @ fit.beta.values
    assert fit.sigma_hat == pytest.approx(np.linalg.norm(r) / math.sqrt(80), rel=1e-6)
    for c in (0.01, 3.0, 250.0):
        f2 = scaled_lasso(X, c * y)
        assert f2.sigma_hat == pytest.approx(c * fit.sigma_hat, rel=1e-8)
        np.testing.assert_allclose(f2.beta.values, c * fit.beta.values, rtol=1e-8, atol=1e-8 * c)


def test_slasso_null_model_gives_zero(rng):
    X = centered(rng, 60, 100)
    y = rng.standard_normal(60)
    y -= y.mean()
    est = slasso_heritability(X, y, lambda0=1e6)
    assert est.diagnostics["support_size"] == 0
    assert est.h2 == pytest.approx(1 / 60, abs=1e-12)


def test_slasso_honest_interval(rng):
    X = centered(rng, 100, 300)
    y = X[:, :6].sum(axis=1) + rng.standard_normal(100)
    y -= y.mean()
    est = slasso_heritability(X, y)
    k = est.diagnostics["support_size"]
    lo, hi = est.diagnostics["raw_interval"]
    k_term = LOG_HALF * k * math.sqrt(300) / 100
    assert (hi - lo) / 2 == pytest.approx(k_term + LOG_HALF / 10, rel=1e-12)
    assert est.interval.kind is IntervalKind.HONEST
    # doubling k doubles the k-dependent part of the half-width
    assert LOG_HALF * 2 * k * math.sqrt(300) / 100 == pytest.approx(2 * k_term)
