import functools

import pytest

from polarlattice.construction import build_spec
from polarlattice.lattice import NoiseModel, PartitionChain

CHAIN = PartitionChain(2.5, 3)
NOISE = NoiseModel(1.0, 2.0)
BETA = 0.3


@functools.lru_cache(maxsize=None)
def _spec(n_exp):
    return build_spec(CHAIN, NOISE, n_exp, BETA)


@pytest.fixture(scope="session")
def reference_spec():
    """Construction at alpha = 2.5, r = 3, (sigma_b, sigma_e) = (1, 2), beta = 0.3."""
    return _spec
