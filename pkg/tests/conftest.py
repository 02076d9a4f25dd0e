import numpy as np
import pytest

from merlin.autodiff.tape import Tape
from merlin.verification import tiny_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tape():
    return Tape("float64")


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def make_config():
    """Factory for tiny configurations with overrides."""
    return tiny_config
