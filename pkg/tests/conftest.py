import numpy as np
import pytest

from vimunet import numerics as nx


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def clean_tape():
    nx.current_tape().reset()
    yield
    nx.current_tape().reset()
