"""Synthetic genotypes with block LD and clonal structure, and phenotype simulation.

Genotypes are binary (haploid), generated by a thresholded Gaussian copula.
Columns fall into contiguous LD blocks; within a block the latent
liabilities share one factor with correlation ``block_corr``.  Samples
belong to ``n_clusters`` lineages, and a lineage shifts the shared factor
of every block by an amount whose share of its variance is
``cluster_divergence``.  Each variant is thresholded at its own allele
frequency drawn uniformly from ``maf_range`` (allele labels flipped at
random).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy import stats

from .core import DataError, EffectVector, HeritabilityError, PhenotypeVector, as_matrix
from .genotype_io import GenotypeMatrix, filter_variants, impute_and_center


class SpecError(HeritabilityError):
    pass


class DegenerateCausalError(HeritabilityError):
    pass


@dataclass
class GenotypeSpec:
    n_blocks: Optional[int] = None  # default: blocks of ~50 variants
    block_corr: float = 0.95
    n_clusters: int = 10
    cluster_divergence: float = 0.3
    maf_range: tuple = (0.3, 0.5)


@dataclass
class CausalSpec:
    mode: str = "gene_blocks"
    blocks: Optional[list] = None  # list of [start, stop) column ranges
    k: Optional[int] = None


@dataclass
class SimulationSpec:
    n: int = 500
    p: int = 2000
    genotype: GenotypeSpec = field(default_factory=GenotypeSpec)
    causal: CausalSpec = field(default_factory=CausalSpec)
    effect_dist: str = "gaussian"
    target_h2: float = 0.8
    sigma2_eps: float = 1.0
    model: str = "fixed_effect"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.genotype, dict):
            self.genotype = _build(GenotypeSpec, self.genotype, "genotype")
        if isinstance(self.causal, dict):
            self.causal = _build(CausalSpec, self.causal, "causal")
        self.genotype.maf_range = tuple(self.genotype.maf_range)
        self.validate()

    def validate(self):
        g = self.genotype
        if self.n < 2 or self.p < 1:
            raise SpecError("n must be >= 2 and p >= 1")
        if not 0.0 < self.target_h2 < 1.0:
            raise SpecError("target_h2 must lie in (0, 1)")
        if self.sigma2_eps <= 0:
            raise SpecError("sigma2_eps must be positive")
        if self.n_blocks > self.p:
            raise SpecError(f"p={self.p} is smaller than n_blocks={self.n_blocks}")
        if not 0.0 <= g.block_corr < 1.0:
            raise SpecError("block_corr must lie in [0, 1)")
        if g.n_clusters < 1 or not 0.0 <= g.cluster_divergence < 1.0:
            raise SpecError("need n_clusters >= 1 and cluster_divergence in [0, 1)")
        lo, hi = g.maf_range
        if not 0.0 < lo <= hi <= 0.5:
            raise SpecError("maf_range must satisfy 0 < lo <= hi <= 0.5")
        if self.effect_dist not in ("gaussian", "student_t3"):
            raise SpecError(f"unknown effect_dist {self.effect_dist!r}")
        if self.model not in ("fixed_effect", "gcta_mixed"):
            raise SpecError(f"unknown model {self.model!r}")
        if self.causal.mode not in ("gene_blocks", "random_k", "null"):
            raise SpecError(f"unknown causal mode {self.causal.mode!r}")
        if self.model == "fixed_effect" and self.causal.mode != "null" and self.causal_indices().size == 0:
            raise SpecError("causal set is empty")

    @property
    def n_blocks(self) -> int:
        return self.genotype.n_blocks or max(1, self.p // 50)

    def block_bounds(self) -> np.ndarray:
        return np.linspace(0, self.p, self.n_blocks + 1).round().astype(int)

    def causal_indices(self) -> np.ndarray:
        """Column indices of causal variants in the unfiltered matrix."""
        c = self.causal
        if c.mode == "null":
            return np.empty(0, dtype=int)
        if c.mode == "random_k":
            if not c.k or c.k < 1 or c.k > self.p:
                raise SpecError("random_k mode needs 1 <= k <= p")
            rng = np.random.default_rng([self.seed, 1])
            return np.sort(rng.choice(self.p, size=c.k, replace=False))
        blocks = c.blocks
        if blocks is None:
            # three "genes" aligned with LD blocks at the quartiles of the genome
            b = self.block_bounds()
            nb = self.n_blocks
            picks = sorted({min(nb - 1, nb * q // 4) for q in (1, 2, 3)})
            blocks = [(b[i], min(b[i + 1], b[i] + 50)) for i in picks]
        idx = []
        for start, stop in blocks:
            if not 0 <= start < stop <= self.p:
                raise SpecError(f"causal block [{start}, {stop}) out of range")
            idx.extend(range(start, stop))
        return np.unique(np.asarray(idx, dtype=int))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["genotype"]["maf_range"] = list(self.genotype.maf_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationSpec":
        return _build(cls, d, "simulation")


def _build(klass, d: dict, where: str):
    known = {f.name for f in fields(klass)}
    unknown = set(d) - known
    if unknown:
        raise SpecError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return klass(**d)


def load_spec(path) -> SimulationSpec:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return SimulationSpec.from_dict(d.get("simulation", d) if isinstance(d, dict) else d)


@dataclass
class SimulatedDataset:
    genotypes: GenotypeMatrix
    phenotype: PhenotypeVector
    true_effects: EffectVector
    true_h2: float
    sigma2_eps: float
    causal: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    target_h2: Optional[float] = None


def simulate_genotypes(spec: SimulationSpec, rng: Optional[np.random.Generator] = None) -> GenotypeMatrix:
    """Binary n x p matrix with block LD and lineage structure; deterministic given ``spec.seed``."""
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    g = spec.genotype
    n, p = spec.n, spec.p
    freq = rng.uniform(*g.maf_range, size=p)
    freq = np.where(rng.random(p) < 0.5, freq, 1.0 - freq)
    thresh = stats.norm.ppf(freq)
    labels = np.sort(rng.integers(g.n_clusters, size=n))
    F, rho = g.cluster_divergence, g.block_corr
    bounds = spec.block_bounds()
    X = np.empty((n, p))
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        shift = rng.standard_normal(g.n_clusters)
        shared = np.sqrt(F) * shift[labels] + np.sqrt(1.0 - F) * rng.standard_normal(n)
        z = np.sqrt(rho) * shared[:, None] + np.sqrt(1.0 - rho) * rng.standard_normal((n, hi - lo))
        X[:, lo:hi] = z < thresh[lo:hi]
    width = len(str(p - 1))
    return GenotypeMatrix.from_array(
        X,
        [f"snp{j:0{width}d}" for j in range(p)],
        [f"sample{i:0{len(str(n - 1))}d}" for i in range(n)],
    )


def draw_effects(causal, p: int, dist: str, rng: np.random.Generator) -> EffectVector:
    causal = np.asarray(causal, dtype=int)
    beta = np.zeros(p)
    if causal.size == 0:
        return EffectVector(beta)
    if dist == "gaussian":
        beta[causal] = rng.standard_normal(causal.size)
    elif dist == "student_t3":
        beta[causal] = rng.standard_t(3, size=causal.size)
    else:
        raise SpecError(f"unknown effect distribution {dist!r}")
    return EffectVector(beta)


def genetic_variance(X: np.ndarray, beta) -> float:
    """beta' S beta with S the sample covariance (divisor n - 1), restricted to the support."""
    b = beta.values if isinstance(beta, EffectVector) else np.asarray(beta, dtype=float)
    s = np.flatnonzero(b)
    if s.size == 0:
        return 0.0
    Xs = X[:, s]
    g = (Xs - Xs.mean(axis=0)) @ b[s]
    return float(g @ g / (X.shape[0] - 1))


def rescale_effects(beta0: EffectVector, G, target_h2: float, sigma2_eps: float) -> EffectVector:
    q = genetic_variance(as_matrix(G), beta0)
    if not q > 0:
        raise DegenerateCausalError("beta0' S beta0 is zero; cannot rescale to the target heritability")
    scale = np.sqrt(sigma2_eps * target_h2 / (q * (1.0 - target_h2)))
    return EffectVector(beta0.values * scale)


def simulate_phenotype_fixed(G, beta: EffectVector, sigma2_eps: float, rng: np.random.Generator) -> PhenotypeVector:
    X = as_matrix(G)
    b = beta.values if isinstance(beta, EffectVector) else np.asarray(beta, dtype=float)
    if b.size != X.shape[1]:
        raise DataError(f"effect vector has length {b.size}, genotype matrix has {X.shape[1]} columns")
    s = np.flatnonzero(b)
    signal = X[:, s] @ b[s]
    noise = np.sqrt(sigma2_eps) * rng.standard_normal(X.shape[0])
    return PhenotypeVector.from_values(signal + noise, sample_ids=getattr(G, "sample_ids", None))


def standardize_columns(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    sd = Xc.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise DataError("zero-variance column cannot be standardized; filter it first")
    return Xc / sd


def _gcta_draw(Z: np.ndarray, target_h2: float, rng: np.random.Generator):
    p = Z.shape[1]
    beta = rng.standard_normal(p) * np.sqrt(target_h2 / p)
    sigma2 = 1.0 - target_h2
    y = Z @ beta + np.sqrt(sigma2) * rng.standard_normal(Z.shape[0])
    return y, beta, sigma2


def simulate_phenotype_gcta(G, target_h2: float, rng: np.random.Generator) -> tuple[PhenotypeVector, float]:
    """Random-effects phenotype on standardized genotypes: beta_j ~ N(0, h2/p), eps ~ N(0, 1 - h2)."""
    if not 0.0 <= target_h2 < 1.0:
        raise SpecError("target_h2 must lie in [0, 1)")
    y, _, sigma2 = _gcta_draw(standardize_columns(as_matrix(G)), target_h2, rng)
    return PhenotypeVector.from_values(y, sample_ids=getattr(G, "sample_ids", None)), sigma2


def true_h2(dataset: SimulatedDataset) -> float:
    sig = genetic_variance(as_matrix(dataset.genotypes), dataset.true_effects)
    if sig == 0.0:
        return 0.0
    return sig / (sig + dataset.sigma2_eps)


def prepare_genotypes(spec: SimulationSpec) -> tuple[GenotypeMatrix, np.ndarray]:
    """Simulate, filter and center; returns the matrix and the surviving causal columns."""
    raw = simulate_genotypes(spec)
    causal_ids = {raw.variant_ids[j] for j in spec.causal_indices()}
    G = impute_and_center(filter_variants(raw))
    causal = np.array([j for j, v in enumerate(G.variant_ids) if v in causal_ids], dtype=int)
    return G, causal


def simulate_dataset(spec: SimulationSpec, G: Optional[GenotypeMatrix] = None,
                     causal: Optional[np.ndarray] = None,
                     rng: Optional[np.random.Generator] = None) -> SimulatedDataset:
    """One replicate: fresh effects and noise on a (possibly shared) centered genotype matrix."""
    if G is None:
        G, causal = prepare_genotypes(spec)
    if rng is None:
        rng = np.random.default_rng([spec.seed, 2])
    if spec.model == "gcta_mixed":
        Z = G if G.standardized else impute_and_center(G, standardize=True)
        y, beta, sigma2 = _gcta_draw(np.asarray(Z.entries), spec.target_h2, rng)
        y = PhenotypeVector.from_values(y, sample_ids=Z.sample_ids)
        ds = SimulatedDataset(Z, y, EffectVector(beta), 0.0, sigma2, np.arange(Z.p), spec.target_h2)
        ds.true_h2 = true_h2(ds)
        return ds
    causal = np.asarray(causal if causal is not None else [], dtype=int)
    if spec.causal.mode == "null" or causal.size == 0:
        beta = EffectVector(np.zeros(G.p))
    else:
        beta0 = draw_effects(causal, G.p, spec.effect_dist, rng)
        beta = rescale_effects(beta0, G, spec.target_h2, spec.sigma2_eps)
    y = simulate_phenotype_fixed(G, beta, spec.sigma2_eps, rng)
    ds = SimulatedDataset(G, y, beta, 0.0, spec.sigma2_eps, causal, spec.target_h2)
    ds.true_h2 = true_h2(ds)
    return ds
