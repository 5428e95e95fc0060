import numpy as np
import pytest

from heritml.genotype_io import GenotypeMatrix
from heritml.simulate import SimulationSpec, prepare_genotypes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_bench():
    """Centered simulated genotypes (n=120, p=400) and their causal columns."""
    spec = SimulationSpec(n=120, p=400, seed=3)
    G, causal = prepare_genotypes(spec)
    return spec, G, causal


def centered_gaussian(rng, n, p):
    X = rng.standard_normal((n, p))
    return X - X.mean(axis=0)


def as_genotypes(X):
    return GenotypeMatrix.from_array(X)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
