"""Selection-free heritability estimators: Eigenprism, spectral MLE and moments.

Eigenprism and the MLE only see the data through the eigenvalues of the
kernel ``K = X X' / p`` and the rotated phenotype ``z = U' y``, so both share
one :class:`SpectralDecomposition` of the n x n Gram matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize, stats

from .core import (
    EstimatorFailed,
    HeritabilityEstimate,
    IntervalKind,
    Method,
    SolverError,
    UnsupportedShapeError,
    as_array,
    as_matrix,
    clamp01,
    make_interval,
    phenotypic_variance,
)

LOG_HALF = abs(math.log(0.5))


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray  # of X X' / p, descending
    z: np.ndarray  # U' y
    n: int
    p: int
    dropped_mean_direction: bool = False


def spectral_decomposition(G, y) -> SpectralDecomposition:
    """Eigen-decomposition of X X' / p and the rotated phenotype.

    When the columns of X are centered, the constant vector spans a null
    direction of the Gram matrix in which a centered y has no component.
    That coordinate carries no information (and would make the likelihood
    unbounded), so it is removed and n - 1 coordinates are returned.
    """
    X = as_matrix(G)
    v = as_array(y)
    n, p = X.shape
    lam, U = np.linalg.eigh(X @ X.T / p)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    U = U[:, order]
    scale = max(1.0, float(np.abs(X).max()))
    dropped = False
    if np.abs(X.sum(axis=0)).max() <= 1e-8 * n * scale and abs(v.sum()) <= 1e-8 * n * max(1.0, np.abs(v).max()):
        j = int(np.argmax(np.abs(U.sum(axis=0))))
        if abs(U[:, j].sum()) > 1 - 1e-6 and lam[j] <= 1e-10 * max(lam[0], 1e-300):
            keep = np.arange(n) != j
            lam, U = lam[keep], U[:, keep]
            dropped = True
    return SpectralDecomposition(lam, U.T @ v, n, p, dropped)


def _z_quantile(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return float(stats.norm.ppf(1.0 - alpha / 2.0))


# ---------------------------------------------------------------- Eigenprism


@dataclass
class EigenprismSolution:
    w: np.ndarray
    objective: float  # max(sum w^2, sum w^2 lam^2)
    theta: float
    dual_value: float
    iterations: int

    @property
    def gap(self) -> float:
        return self.objective - self.dual_value


def _weighted_min_norm(lam: np.ndarray, d: np.ndarray):
    """argmin sum d_i w_i^2  s.t.  sum w = 0, sum w lam = 1   (d > 0).

    Returns (w, value).  With A = [1'; lam'], w = D^-1 A' (A D^-1 A')^-1 e2.
    """
    inv = 1.0 / d
    a = inv.sum()
    b = (inv * lam).sum()
    c = (inv * lam * lam).sum()
    det = a * c - b * b
    if not det > 0:
        return None, np.inf
    # (A D^-1 A')^-1 e2 = (-b, a) / det
    w = inv * (-b + a * lam) / det
    return w, a / det


def solve_p1(lam: np.ndarray, tol: float = 1e-15, max_iter: int = 10_000) -> EigenprismSolution:
    """Minimise max(sum w^2, sum w^2 lam^2) subject to sum w = 0 and sum w lam = 1.

    Uses max(f, g) = max_{theta in [0,1]} theta f + (1 - theta) g.  For fixed
    theta the inner problem is a weighted least-norm problem with a closed
    form; its value q(theta) is concave with q'(theta) = f(w) - g(w) at the
    inner minimiser.  The saddle point is the root of that derivative (or an
    endpoint), and the primal point there is optimal.  The duality gap is
    returned as the optimality certificate.
    """
    lam = np.asarray(lam, dtype=float)
    lam2 = lam * lam

    def inner(theta):
        return _weighted_min_norm(lam, theta + (1.0 - theta) * lam2)

    def slope(theta):
        w, _ = inner(theta)
        return float(w @ w) - float(w @ (w * lam2))

    if inner(1.0)[0] is None:
        raise SolverError("Eigenprism program is infeasible for this spectrum")
    lo = 1e-14 if np.any(lam2 == 0) else 0.0
    iterations = 2
    if slope(1.0) >= 0:
        theta = 1.0
    elif slope(lo) <= 0:
        theta = lo
    else:
        theta, r = optimize.brentq(slope, lo, 1.0, xtol=tol, rtol=4 * np.finfo(float).eps,
                                   maxiter=max_iter, full_output=True, disp=False)
        if not r.converged:
            raise SolverError("Eigenprism saddle-point search did not converge")
        iterations += r.iterations
    w, dual_value = inner(theta)
    obj = max(float(w @ w), float(w @ (w * lam2)))
    # at theta = 1 the optimum is the reference point; keep whichever rounds lower
    ref = eigenprism_reference_point(lam)
    ref_obj = max(float(ref @ ref), float(ref @ (ref * lam2)))
    if ref_obj < obj:
        w, obj = ref, ref_obj
    return EigenprismSolution(w, obj, float(theta), float(dual_value), iterations)


def eigenprism_reference_point(lam: np.ndarray) -> np.ndarray:
    """Feasible point (lam - mean) / sum((lam - mean) lam)."""
    c = lam - lam.mean()
    return c / (c @ lam)


def eigenprism(G, y, alpha: float = 0.05, spectrum: Optional[SpectralDecomposition] = None,
               constraint_tol: float = 1e-8) -> HeritabilityEstimate:
    X = as_matrix(G)
    n, p = X.shape
    if p <= n:
        raise UnsupportedShapeError(f"Eigenprism needs p > n (got n={n}, p={p})")
    sd = spectrum if spectrum is not None else spectral_decomposition(X, y)
    v = as_array(y)
    sol = solve_p1(sd.eigenvalues)
    w = sol.w
    r_sum = abs(float(w.sum()))
    r_lam = abs(float(w @ sd.eigenvalues) - 1.0)
    if max(r_sum, r_lam) > constraint_tol or sol.gap > 1e-8 * max(1.0, sol.objective):
        raise SolverError(
            f"Eigenprism optimisation failed (residuals {r_sum:.2e}, {r_lam:.2e}; gap {sol.gap:.2e})"
        )
    denom = float(v @ v) / n
    raw = float(w @ sd.z ** 2) / denom
    half = _z_quantile(alpha) * math.sqrt(2.0 * sol.objective)
    return HeritabilityEstimate(
        Method.EIGENPRISM,
        clamp01(raw),
        make_interval(raw, half, IntervalKind.CONFIDENCE),
        {
            "h2_raw": raw,
            "P1": sol.objective,
            "raw_interval": (raw - half, raw + half),
            "half_width": half,
            "residual_sum": r_sum,
            "residual_lambda": r_lam,
            "duality_gap": sol.gap,
            "theta": sol.theta,
            "solver_iterations": sol.iterations,
            "objective_value": sol.objective,
        },
    )


# ----------------------------------------------------------------------- MLE


def mle_profile(eta, lam: np.ndarray, z: np.ndarray) -> float:
    """Profiled log-likelihood (per observation) with sigma^2 maximised out."""
    n = z.size
    d = eta * lam + 1.0
    s2 = float(np.sum(z * z / d)) / n
    if not s2 > 0:
        return -np.inf
    return -0.5 * math.log(s2) - 0.5 * float(np.sum(np.log(d))) / n - 0.5


def mle_sigma2(eta: float, lam: np.ndarray, z: np.ndarray) -> float:
    return float(np.sum(z * z / (eta * lam + 1.0))) / z.size


def maximize_mle(lam: np.ndarray, z: np.ndarray, eta_max: float = 1e6, rtol: float = 1e-8):
    """Grid over log(eta) (plus eta = 0), then bounded Brent around the best grid point."""
    grid = np.concatenate([[0.0], np.logspace(-6, math.log10(eta_max), 241)])
    vals = np.array([mle_profile(e, lam, z) for e in grid])
    if not np.all(np.isfinite(vals)):
        bad = grid[~np.isfinite(vals)]
        raise EstimatorFailed(f"non-finite MLE objective at eta={bad[0]:g}")
    i = int(np.argmax(vals))
    eta, best = grid[i], vals[i]
    nfev = grid.size
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    if hi > lo:
        llo = math.log(max(lo, 1e-12))
        res = optimize.minimize_scalar(
            lambda t: -mle_profile(math.exp(t), lam, z),
            bounds=(llo, math.log(hi)), method="bounded", options={"xatol": rtol},
        )
        nfev += res.nfev
        if -res.fun > best:
            eta, best = math.exp(res.x), -res.fun
    return float(eta), float(best), nfev


def mle_heritability(G, y, alpha: float = 0.05, spectrum: Optional[SpectralDecomposition] = None,
                     eta_max: float = 1e6) -> HeritabilityEstimate:
    X = as_matrix(G)
    n = X.shape[0]
    if n < 10:
        raise UnsupportedShapeError("MLE needs at least 10 samples")
    sd = spectrum if spectrum is not None else spectral_decomposition(X, y)
    eta, obj, nfev = maximize_mle(sd.eigenvalues, sd.z, eta_max)
    s2 = mle_sigma2(eta, sd.eigenvalues, sd.z)
    var_y = phenotypic_variance(y, "unbiased")
    raw = 1.0 - s2 / var_y
    half = _z_quantile(alpha) / math.sqrt(2.0 * n)
    diag = {
        "h2_raw": raw,
        "eta": eta,
        "sigma2": s2,
        "objective_value": obj,
        "solver_iterations": nfev,
        "raw_interval": (raw - half, raw + half),
        "half_width": half,
    }
    if eta >= eta_max * (1 - 1e-6):
        diag["warning"] = "eta at search upper bound"
    return HeritabilityEstimate(Method.MLE, clamp01(raw), make_interval(raw, half, IntervalKind.CONFIDENCE), diag)


# ------------------------------------------------------------------- Moments


@dataclass(frozen=True)
class MomentStatistics:
    m1_hat: float
    m2_hat: float
    sigma2_tilde: float
    tau2_tilde: float


def moment_statistics(G, y) -> MomentStatistics:
    """Moment statistics computed through the n x n Gram matrix (S = X'X/n is never formed)."""
    X = as_matrix(G)
    v = as_array(y)
    n, p = X.shape
    K = X @ X.T
    tr_s = float(np.trace(K)) / n
    tr_s2 = float(np.sum(K * K)) / n ** 2
    m1 = tr_s / p
    m2 = tr_s2 / p - (p / n) * m1 ** 2
    if not m2 > 0:
        raise EstimatorFailed(f"ill-conditioned spectrum: m2_hat = {m2:.3g}")
    yy = float(v @ v) / n
    xty = X.T @ v
    xty2 = float(xty @ xty)
    a = p * m1 ** 2 / ((n + 1) * m2)
    b = m1 / (n * (n + 1) * m2)
    return MomentStatistics(m1, m2, (1 + a) * yy - b * xty2, -a * yy + b * xty2)


def moment_heritability(G, y, alpha: float = 0.05) -> HeritabilityEstimate:
    """Method-of-moments estimate; the interval has fixed half-width log(2) sqrt(p)/n (alpha unused)."""
    X = as_matrix(G)
    n, p = X.shape
    ms = moment_statistics(X, y)
    total = ms.tau2_tilde + ms.sigma2_tilde
    if not total > 0:
        raise EstimatorFailed("moment estimator failed: sigma2 + tau2 <= 0")
    raw = ms.tau2_tilde / total
    half = LOG_HALF * math.sqrt(p) / n
    return HeritabilityEstimate(
        Method.MOMENT,
        clamp01(raw),
        make_interval(raw, half, IntervalKind.CONFIDENCE),
        {
            "h2_raw": raw,
            "m1_hat": ms.m1_hat,
            "m2_hat": ms.m2_hat,
            "sigma2_tilde": ms.sigma2_tilde,
            "tau2_tilde": ms.tau2_tilde,
            "raw_interval": (raw - half, raw + half),
            "half_width": half,
        },
    )
