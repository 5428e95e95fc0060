"""Boosting heritability: screening, repeated sample splitting, aggregation.

Screening by absolute marginal correlation is applied once to the full
data.  Each of the B replicates then splits the samples in two halves,
selects variants with a cross-validated elastic net on one half and
estimates the noise variance by least squares on the other, and vice
versa.  The 2B split estimates are averaged; their empirical quantiles form
the reliable interval.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .core import (
    EstimatorFailed,
    HeritabilityError,
    HeritabilityEstimate,
    Interval,
    IntervalKind,
    Method,
    as_array,
    as_matrix,
    clamp01,
    phenotypic_variance,
)
from .sparse import PenaltySpec, _fit_at, cv_path

log = logging.getLogger(__name__)


class SupportTooLargeError(HeritabilityError):
    pass


@dataclass
class BoostConfig:
    B: int = 100
    drop_frac: float = 0.25
    enet: PenaltySpec = field(default_factory=PenaltySpec)
    interval_quantiles: tuple = (0.025, 0.975)
    max_support: Optional[int] = None  # default floor(n/2) - 2
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if isinstance(self.enet, dict):
            self.enet = PenaltySpec(**self.enet)
        if not 0.0 <= self.drop_frac < 1.0:
            raise ValueError("drop_frac must lie in [0, 1)")
        if self.B < 1:
            raise ValueError("B must be at least 1")
        lo, hi = self.interval_quantiles
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError("interval quantiles must be ordered within [0, 1]")


@dataclass(frozen=True)
class SplitEstimate:
    replicate: int
    half: str  # "A_select_B_estimate" or "B_select_A_estimate"
    support_size: int
    sigma2_hat: float
    h2: float


def screen_correlation(G, y, drop_frac: float = 0.25) -> np.ndarray:
    """Indices (ascending) of the ceil((1 - drop_frac) p) columns most correlated with y.

    Zero-variance columns get correlation 0; ties go to the lower index.
    """
    X = as_matrix(G)
    v = as_array(y)
    p = X.shape[1]
    keep = math.ceil(round((1.0 - drop_frac) * p, 9))
    Xc = X - X.mean(axis=0)
    vc = v - v.mean()
    sx = np.sqrt((Xc * Xc).sum(axis=0))
    sy = math.sqrt(float(vc @ vc))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.abs(Xc.T @ vc) / (sx * sy)
    corr = np.where((sx > 0) & np.isfinite(corr), corr, 0.0)
    order = np.lexsort((np.arange(p), -corr))  # by |corr| desc, then index asc
    return np.sort(order[:keep])


def split_halves(n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly random partition into halves of sizes floor(n/2) and ceil(n/2)."""
    if n < 4:
        raise ValueError("need n >= 4 to split")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    h = n // 2
    return np.sort(perm[:h]), np.sort(perm[h:])


def ols_noise_variance(X_sub, y_sub) -> tuple[float, int]:
    """Residual variance RSS / (m - r - 1) of a least-squares fit with intercept.

    r is the numerical rank of the centered design (minimum-norm solution for
    rank-deficient designs).  Returns (sigma2_hat, r).
    """
    X = np.asarray(X_sub, dtype=float)
    v = np.asarray(y_sub, dtype=float)
    m = v.size
    if X.ndim == 1:
        X = X[:, None]
    vc = v - v.mean()
    if X.shape[1] == 0:
        r = 0
        resid = vc
    else:
        Xc = X - X.mean(axis=0)
        coef, _, r, _ = np.linalg.lstsq(Xc, vc, rcond=None)
        resid = vc - Xc @ coef
    dof = m - r - 1
    if dof <= 0:
        raise SupportTooLargeError(f"support of rank {r} leaves no residual degrees of freedom (m={m})")
    return float(resid @ resid) / dof, int(r)


def _select(X: np.ndarray, y: np.ndarray, enet: PenaltySpec, max_support: int, rng) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    if enet.lam == "cv":
        cv = cv_path(Xc, yc, enet.alpha_mix, enet.cv_folds, rng, enet.n_lambda)
        lam, grid = cv.lam, cv.lambdas
    else:
        lam, grid = float(enet.lam), None
    beta = _fit_at(Xc, yc, lam, enet.alpha_mix, grid, kkt_tol=1e-6).beta
    S = np.flatnonzero(beta)
    if S.size > max_support:
        # keep the largest |coefficient|s; stable sort keeps lower indices on ties
        S = np.sort(S[np.argsort(-np.abs(beta[S]), kind="stable")[:max_support]])
    return S


def _one_replicate(X, y, b: int, cfg: BoostConfig, max_support: int):
    rng = np.random.default_rng([cfg.seed, b])
    A, Bh = split_halves(len(y), rng)
    out = []
    for sel, est, tag in ((A, Bh, "A_select_B_estimate"), (Bh, A, "B_select_A_estimate")):
        S = _select(X[sel], y[sel], cfg.enet, max_support, rng)
        s2, _ = ols_noise_variance(X[np.ix_(est, S)], y[est])
        h2 = clamp01(1.0 - s2 / phenotypic_variance(y[est], "unbiased"))
        out.append(SplitEstimate(b, tag, int(S.size), s2, h2))
    return out


def _safe_replicate(X, y, b, cfg, max_support):
    try:
        return _one_replicate(X, y, b, cfg, max_support), None
    except (HeritabilityError, np.linalg.LinAlgError, ValueError) as exc:
        return None, f"replicate {b}: {exc}"


def boost_heritability(G, y, cfg: Optional[BoostConfig] = None) -> HeritabilityEstimate:
    cfg = cfg or BoostConfig()
    X = as_matrix(G)
    v = as_array(y)
    n = X.shape[0]
    if n < 20:
        raise EstimatorFailed("boosting heritability needs n >= 20")
    max_support = cfg.max_support if cfg.max_support is not None else n // 2 - 2
    kept = screen_correlation(X, v, cfg.drop_frac)
    Xs = np.ascontiguousarray(X[:, kept])

    if cfg.n_jobs == 1:
        results = [_safe_replicate(Xs, v, b, cfg, max_support) for b in range(cfg.B)]
    else:
        results = Parallel(n_jobs=cfg.n_jobs, prefer="threads")(
            delayed(_safe_replicate)(Xs, v, b, cfg, max_support) for b in range(cfg.B)
        )
    splits = [s for res, _ in results if res is not None for s in res]
    errors = [e for res, e in results if res is None]
    for e in errors:
        log.debug("boosther %s", e)
    n_ok = cfg.B - len(errors)
    if n_ok < cfg.B / 2:
        raise EstimatorFailed(f"only {n_ok} of {cfg.B} replicates succeeded")

    vals = np.array([s.h2 for s in splits])
    point = float(vals.mean())
    lo, hi = np.quantile(vals, cfg.interval_quantiles)
    return HeritabilityEstimate(
        Method.BOOSTHER,
        point,
        Interval(float(lo), float(hi), IntervalKind.RELIABLE),
        {
            "h2_raw": point,
            "splits": splits,
            "n_screened": int(kept.size),
            "screened": kept,
            "replicates_ok": n_ok,
            "failures": errors,
            "support_size": float(np.mean([s.support_size for s in splits])),
            "max_support": max_support,
        },
    )
