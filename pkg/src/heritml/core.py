"""Linear-model data types and the two heritability identities.

Every estimator in the package reduces to one of

    h2 = signal_var / var_y            (explained genetic variance)
    h2 = 1 - sigma2_noise / var_y      (residual noise variance)

followed by clamping to [0, 1].  Raw, unclamped values are kept in the
estimate diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, NamedTuple, Optional, Sequence

import numpy as np


class HeritabilityError(Exception):
    """Base class for all estimator and data errors raised by the package."""


class DataError(HeritabilityError):
    pass


class DegeneratePhenotypeError(HeritabilityError):
    pass


class UnsupportedShapeError(HeritabilityError):
    pass


class SolverError(HeritabilityError):
    pass


class EstimatorFailed(HeritabilityError):
    pass


class Method(str, Enum):
    ORACLE = "oracle"
    EIGENPRISM = "eigenprism"
    MLE = "mle"
    MOMENT = "moment"
    SLASSO = "slasso"
    ENET = "enet"
    BOOSTHER = "boosther"


class IntervalKind(str, Enum):
    CONFIDENCE = "confidence"
    HONEST = "honest"
    RELIABLE = "reliable"


class Interval(NamedTuple):
    lo: float
    hi: float
    kind: IntervalKind

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class PhenotypeVector:
    values: np.ndarray
    mean_removed: bool = False
    original_mean: float = 0.0
    sample_ids: Optional[tuple] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", v)
        if v.size < 2:
            raise DataError("a phenotype needs at least 2 observations")
        if self.mean_removed and abs(v.sum()) > 1e-10 * v.size * max(1.0, np.abs(v).max()):
            raise DataError("phenotype flagged mean_removed but does not sum to zero")

    @classmethod
    def from_values(cls, values, center: bool = True, sample_ids=None) -> "PhenotypeVector":
        v = np.asarray(values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise DataError("phenotype contains non-finite values")
        ids = tuple(sample_ids) if sample_ids is not None else None
        if not center:
            return cls(v, False, 0.0, ids)
        mu = float(v.mean())
        return cls(v - mu, True, mu, ids)

    @property
    def n(self) -> int:
        return self.values.size

    def subset(self, rows) -> "PhenotypeVector":
        """Restrict to ``rows`` and re-center (centering is not preserved by subsetting)."""
        ids = None if self.sample_ids is None else tuple(self.sample_ids[i] for i in rows)
        return PhenotypeVector.from_values(self.values[np.asarray(rows)], center=self.mean_removed,
                                           sample_ids=ids)


@dataclass(frozen=True)
class EffectVector:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).ravel())

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values)

    @property
    def k(self) -> int:
        return int(np.count_nonzero(self.values))

    def __len__(self):
        return self.values.size


@dataclass
class HeritabilityEstimate:
    method: Method
    h2: Optional[float]
    interval: Optional[Interval] = None
    diagnostics: dict[str, Any] = field(default_factory=dict)
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @classmethod
    def failed(cls, method: Method, reason: str) -> "HeritabilityEstimate":
        return cls(Method(method), None, None, {"error": reason}, status="failed")


def clamp01(x: float) -> float:
    return float(min(1.0, max(0.0, x)))


def make_interval(h2: float, half_width: float, kind: IntervalKind) -> Interval:
    """Symmetric interval around the (raw) point estimate, clamped to [0, 1]."""
    return Interval(clamp01(h2 - half_width), clamp01(h2 + half_width), IntervalKind(kind))


def as_array(y) -> np.ndarray:
    if isinstance(y, PhenotypeVector):
        return y.values
    return np.asarray(y, dtype=float).ravel()


def phenotypic_variance(y, convention: str = "unbiased") -> float:
    """Variance of the phenotype.

    ``mean_square`` is ``||y||^2 / n`` and is only meaningful for centered
    phenotypes; ``unbiased`` is the usual sample variance (divisor n - 1).
    """
    v = as_array(y)
    if v.size < 2:
        raise DataError("phenotypic variance needs n >= 2")
    if not np.all(np.isfinite(v)):
        raise DataError("phenotype contains non-finite values")
    if convention == "mean_square":
        if isinstance(y, PhenotypeVector) and not y.mean_removed:
            raise DataError("mean_square convention requires a mean-removed phenotype")
        return float(v @ v / v.size)
    if convention == "unbiased":
        return float(np.var(v, ddof=1))
    raise ValueError(f"unknown variance convention {convention!r}")


def _check_var_y(var_y: float):
    if not np.isfinite(var_y) or var_y <= 0:
        raise DegeneratePhenotypeError(f"phenotypic variance must be positive, got {var_y}")


def heritability_from_noise(sigma2_hat: float, var_y: float) -> float:
    _check_var_y(var_y)
    if sigma2_hat < 0:
        raise ValueError("noise variance must be non-negative")
    return clamp01(1.0 - sigma2_hat / var_y)


def heritability_from_signal(signal_var: float, var_y: float) -> float:
    _check_var_y(var_y)
    if signal_var < 0:
        raise ValueError("signal variance must be non-negative")
    return clamp01(signal_var / var_y)


def oracle_estimate(y, sigma2_true: float) -> HeritabilityEstimate:
    """Benchmark estimate using the simulator's true noise variance."""
    var_y = phenotypic_variance(y, "unbiased")
    raw = 1.0 - sigma2_true / var_y if var_y > 0 else float("nan")
    return HeritabilityEstimate(
        Method.ORACLE,
        heritability_from_noise(sigma2_true, var_y),
        None,
        {"h2_raw": raw, "var_y": var_y, "sigma2_true": float(sigma2_true)},
    )


def as_matrix(G) -> np.ndarray:
    """Plain float matrix from a GenotypeMatrix or array-like."""
    X = np.asarray(getattr(G, "entries", G), dtype=float)
    if X.ndim != 2:
        raise DataError("genotype matrix must be two-dimensional")
    if np.isnan(X).any():
        raise DataError("genotype matrix has missing entries; impute first")
    return X
