import numpy as np
import pytest

from mlfp.model import chain_finite

CHAIN_SPEC = {"family": "chain_finite", "params": {"states": 5, "actions": 2, "seed": 1}, "discount": 0.1}


@pytest.fixture
def chain():
    return chain_finite(5, 2, seed=1, discount=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
