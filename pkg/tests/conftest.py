import numpy as np
import pytest

from conjparse.vocab import Vocabulary


@pytest.fixture
def relations():
    return Vocabulary(["direct", "marry", "produce"])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
