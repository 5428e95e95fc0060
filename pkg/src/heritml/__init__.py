"""Heritability estimation for high-dimensional genotype data."""

from .boost import BoostConfig, boost_heritability
from .core import (
    HeritabilityError,
    HeritabilityEstimate,
    Interval,
    IntervalKind,
    Method,
    PhenotypeVector,
    EffectVector,
    oracle_estimate,
)
from .direct import eigenprism, mle_heritability, moment_heritability, spectral_decomposition
from .genotype_io import GenotypeMatrix, load_genotype_csv, load_phenotype_csv, prepare
from .simulate import SimulationSpec, simulate_dataset
from .sparse import PenaltySpec, enet_heritability, slasso_heritability

__version__ = "0.1.0"
