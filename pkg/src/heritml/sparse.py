"""Penalised regression (elastic net, scaled lasso) and the two plug-in estimators.

The elastic-net objective is

    (1/2n) ||y - X b||^2 + lambda * [ (1 - alpha)/2 ||b||^2 + alpha ||b||_1 ]

solved by cyclic coordinate descent (see ``_cd``).  Coefficients live on the
raw scale of X; no internal standardisation is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _cd
from .core import (
    EffectVector,
    HeritabilityEstimate,
    IntervalKind,
    Method,
    SolverError,
    as_array,
    as_matrix,
    clamp01,
    make_interval,
    phenotypic_variance,
)

MAX_SWEEPS = 100_000
PATH_TOL = 1e-7  # glmnet-style: max_j (x_j'x_j/n) (db_j)^2 relative to ||y||^2/n
KKT_TOL = 1e-6
POLISH_TOL = 1e-12  # scaled-lasso sigma iterations continue to this level once converged
LOG_HALF = abs(math.log(0.5))


class DegenerateFitError(SolverError):
    pass


@dataclass
class PenaltySpec:
    alpha_mix: float = 0.01
    lam: Union[float, str] = "cv"
    cv_folds: int = 10
    n_lambda: int = 100

    def __post_init__(self):
        if not 0.0 <= self.alpha_mix <= 1.0:
            raise ValueError("alpha_mix must lie in [0, 1]")
        if self.lam != "cv" and not float(self.lam) > 0:
            raise ValueError("lambda must be positive or 'cv'")
        if self.cv_folds < 2:
            raise ValueError("need at least 2 CV folds")


@dataclass
class EnetSolution:
    beta: np.ndarray
    lam: float
    alpha: float
    sweeps: int
    converged: bool
    kkt: float
    trace: np.ndarray = field(default_factory=lambda: np.empty(0))


def _prep(X: np.ndarray, y: np.ndarray):
    XT = np.ascontiguousarray(X.T)
    col_sq = np.einsum("ji,ji->j", XT, XT) / X.shape[0]
    return XT, col_sq


def lambda_max(X: np.ndarray, y: np.ndarray, alpha: float) -> float:
    """Smallest lambda with an all-zero solution (alpha floored at 1e-3).

    Nudged up by a relative 1e-12 so that lambda * alpha does not round below
    max |x_j'y| / n and leave a coefficient of order machine epsilon.
    """
    return float(np.abs(X.T @ y).max()) / (X.shape[0] * max(alpha, 1e-3)) * (1.0 + 1e-12)


def lambda_grid(X, y, alpha: float, n_lambda: int = 100, ratio: float = 1e-3) -> np.ndarray:
    lmax = lambda_max(X, y, alpha)
    if lmax == 0:
        lmax = 1.0
    return np.geomspace(lmax, ratio * lmax, n_lambda)


def enet_objective(X, y, beta, lam: float, alpha: float) -> float:
    r = y - X @ beta
    return float(r @ r / (2 * len(y)) + lam * ((1 - alpha) / 2 * beta @ beta + alpha * np.abs(beta).sum()))


def kkt_residual(X, y, beta, lam: float, alpha: float) -> float:
    """Largest violation of the elastic-net subgradient optimality conditions."""
    n = len(y)
    g = X.T @ (y - X @ beta) / n - lam * (1 - alpha) * beta
    l1 = lam * alpha
    nz = beta != 0
    res = np.where(nz, np.abs(g - l1 * np.sign(beta)), np.maximum(np.abs(g) - l1, 0.0))
    return float(res.max()) if res.size else 0.0


def enet_solve(X, y, lam: float, alpha: float, beta0: Optional[np.ndarray] = None,
               kkt_tol: float = KKT_TOL, max_sweeps: int = MAX_SWEEPS, trace: bool = False,
               _prepared=None) -> EnetSolution:
    """Coordinate descent at a single lambda, tightened until the KKT residual is below ``kkt_tol``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    XT, col_sq = _prepared if _prepared is not None else _prep(X, y)
    beta = np.zeros(X.shape[1]) if beta0 is None else np.array(beta0, dtype=float)
    r = y - X @ beta
    scale = max(float(y @ y) / len(y), 1e-300)
    l1, l2 = lam * alpha, lam * (1 - alpha)
    total = 0
    traces = []
    tol = PATH_TOL
    kkt = np.inf
    while total < max_sweeps:
        buf = np.empty(max_sweeps - total if trace else 0)
        s, _ = _cd.solve(XT, r, beta, col_sq, l1, l2, tol * scale, max_sweeps - total, buf)
        if trace:
            traces.append(buf[:s])
        total += s
        r = y - X @ beta  # refresh accumulated round-off in the running residual
        kkt = kkt_residual(X, y, beta, lam, alpha)
        if kkt <= kkt_tol:
            break
        tol *= 1e-2
        if tol < 1e-30:
            break
    converged = kkt <= kkt_tol
    return EnetSolution(beta, lam, alpha, total, converged, kkt,
                        np.concatenate(traces) if traces else np.empty(0))


def enet_path(X, y, lambdas, alpha: float, tol: float = PATH_TOL) -> np.ndarray:
    """Warm-started coefficients for every lambda in a decreasing grid (rows)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    XT, col_sq = _prep(X, y)
    betas, _, conv = _cd.path(XT, y, col_sq, np.asarray(lambdas, dtype=float), alpha,
                              tol * float(y @ y) / len(y), MAX_SWEEPS)
    if not conv.all():
        raise SolverError("elastic-net path did not converge")
    return betas


def _fit_at(X, y, lam: float, alpha: float, grid: Optional[np.ndarray], kkt_tol: float) -> EnetSolution:
    """Fit at ``lam`` warm-started along the part of ``grid`` above it."""
    prepared = _prep(X, y)
    beta0 = None
    if grid is not None:
        upper = grid[grid > lam]
        if upper.size:
            XT, col_sq = prepared
            betas, _, _ = _cd.path(XT, y, col_sq, upper, alpha, PATH_TOL * float(y @ y) / len(y), MAX_SWEEPS)
            beta0 = betas[-1]
    sol = enet_solve(X, y, lam, alpha, beta0, kkt_tol=kkt_tol, _prepared=prepared)
    if not sol.converged:
        raise SolverError(f"elastic net did not reach KKT tolerance ({sol.kkt:.2e} after {sol.sweeps} sweeps)")
    return sol


def elastic_net_fit(G, y, spec: PenaltySpec, rng=None, kkt_tol: float = KKT_TOL) -> EffectVector:
    X = as_matrix(G)
    v = as_array(y)
    if spec.lam == "cv":
        lam = cv_lambda(X, v, spec.alpha_mix, spec.cv_folds, rng, spec.n_lambda)
    else:
        lam = float(spec.lam)
    grid = lambda_grid(X, v, spec.alpha_mix, spec.n_lambda)
    return EffectVector(_fit_at(X, v, lam, spec.alpha_mix, grid, kkt_tol).beta)


# ------------------------------------------------------------ cross-validation


def fold_ids(n: int, folds: int, rng) -> np.ndarray:
    """Fold label per sample: a random permutation cut into contiguous blocks."""
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    labels = np.empty(n, dtype=int)
    for k, chunk in enumerate(np.array_split(perm, folds)):
        labels[chunk] = k
    return labels


@dataclass
class CVResult:
    lambdas: np.ndarray
    cv_error: np.ndarray
    lam: float
    index: int
    folds: np.ndarray


def cv_path(X, y, alpha: float, folds: int = 10, rng=None, n_lambda: int = 100,
            tol: float = PATH_TOL) -> CVResult:
    """K-fold CV error along the full-data lambda grid (intercept refit per fold)."""
    X = as_matrix(X)
    y = as_array(y)
    n = len(y)
    if n < folds:
        raise ValueError(f"need n >= folds (n={n}, folds={folds})")
    lambdas = lambda_grid(X, y, alpha, n_lambda)
    labels = fold_ids(n, folds, rng)
    err = np.zeros(n_lambda)
    for k in range(folds):
        test = labels == k
        Xtr, ytr = X[~test], y[~test]
        mx, my = Xtr.mean(axis=0), ytr.mean()
        Xtr = Xtr - mx
        ytr = ytr - my
        XT, col_sq = _prep(Xtr, ytr)
        XT_test = np.ascontiguousarray((X[test] - mx).T)
        e, _ = _cd.path_test_error(XT, ytr, col_sq, lambdas, alpha, tol * float(ytr @ ytr) / len(ytr),
                                   MAX_SWEEPS, XT_test, y[test] - my)
        err += e * test.sum()
    err /= n
    i = int(np.argmin(err))
    return CVResult(lambdas, err, float(lambdas[i]), i, labels)


def cv_lambda(G, y, alpha_mix: float, folds: int = 10, rng=None, n_lambda: int = 100) -> float:
    return cv_path(G, y, alpha_mix, folds, rng, n_lambda).lam


def enet_heritability(G, y, alpha_mix: float = 0.01, folds: int = 10, rng=0,
                      n_lambda: int = 100) -> HeritabilityEstimate:
    """Plug-in estimate: variance of the fitted values over Var(y); no interval is available."""
    X = as_matrix(G)
    v = as_array(y)
    cv = cv_path(X, v, alpha_mix, folds, rng, n_lambda)
    sol = _fit_at(X, v, cv.lam, alpha_mix, cv.lambdas, KKT_TOL)
    beta = sol.beta
    S = np.flatnonzero(beta)
    var_y = phenotypic_variance(v, "unbiased")
    diag = {"support_size": int(S.size), "lambda": cv.lam, "lambda_index": cv.index,
            "solver_iterations": sol.sweeps, "kkt": sol.kkt,
            "objective_value": enet_objective(X, v, beta, cv.lam, alpha_mix)}
    if S.size == 0:
        diag.update(h2_raw=0.0, empty_support=True)
        return HeritabilityEstimate(Method.ENET, 0.0, None, diag)
    fitted = X[:, S] @ beta[S]
    signal = float(np.var(fitted, ddof=1))
    raw = signal / var_y
    diag["h2_raw"] = raw
    diag["signal_var"] = signal
    return HeritabilityEstimate(Method.ENET, clamp01(raw), None, diag)


# --------------------------------------------------------------- scaled lasso


@dataclass
class ScaledLassoFit:
    beta: EffectVector
    sigma_hat: float
    iterations: int
    converged: bool
    lambda0: float


def scaled_lasso(G, y, lambda0: Optional[float] = None, tol: float = 1e-6, max_iter: int = 100) -> ScaledLassoFit:
    """Square-root (scaled) lasso by alternating a lasso step at penalty lambda0*sigma and a noise update.

    Columns are put on unit scale (||x_j||^2 / n = 1) for the penalty and
    the coefficients mapped back, so lambda0 = sqrt(2 log p / n) is the
    usual universal level.
    """
    X = as_matrix(G)
    v = as_array(y)
    n, p = X.shape
    if lambda0 is None:
        lambda0 = math.sqrt(2.0 * math.log(p) / n)
    sd = np.sqrt((X * X).sum(axis=0) / n)
    usable = sd > 0
    Z = X[:, usable] / sd[usable]
    prepared = _prep(Z, v)
    beta_z = np.zeros(Z.shape[1])
    sigma = math.sqrt(float(v @ v) / n)
    if sigma == 0:
        raise DegenerateFitError("phenotype is identically zero")
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        sol = enet_solve(Z, v, lambda0 * sigma, 1.0, beta_z, kkt_tol=1e-11 * sigma, _prepared=prepared)
        beta_z = sol.beta
        r = v - Z @ beta_z
        new = math.sqrt(float(r @ r) / n)
        if new <= 1e-12 * sigma:
            raise DegenerateFitError("scaled lasso collapsed to a perfect fit (sigma -> 0)")
        change = abs(new - sigma) / sigma
        sigma = new
        converged = converged or change <= tol
        # keep polishing while cheap so the fit is scale-equivariant to round-off
        if change <= POLISH_TOL:
            break
    beta = np.zeros(p)
    beta[usable] = beta_z / sd[usable]
    return ScaledLassoFit(EffectVector(beta), sigma, it, converged, float(lambda0))


def slasso_heritability(G, y, alpha: float = 0.05, lambda0: Optional[float] = None) -> HeritabilityEstimate:
    """h2 = 1 - sigma_SL^2 / Var(y) with the honest interval +- log(2) (k sqrt(p)/n + 1/sqrt(n)); alpha unused."""
    X = as_matrix(G)
    n, p = X.shape
    fit = scaled_lasso(X, y, lambda0)
    var_y = phenotypic_variance(y, "unbiased")
    raw = 1.0 - fit.sigma_hat ** 2 / var_y
    k = fit.beta.k
    half = LOG_HALF * (k * math.sqrt(p) / n + 1.0 / math.sqrt(n))
    return HeritabilityEstimate(
        Method.SLASSO,
        clamp01(raw),
        make_interval(raw, half, IntervalKind.HONEST),
        {"h2_raw": raw, "support_size": k, "sigma_hat": fit.sigma_hat, "solver_iterations": fit.iterations,
         "converged": fit.converged, "lambda0": fit.lambda0, "raw_interval": (raw - half, raw + half),
         "half_width": half},
    )
