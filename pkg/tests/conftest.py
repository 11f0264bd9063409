import numpy as np
import pytest

from simfold.kinetics import load_mechanism, mechanism_as_model


@pytest.fixture(scope="session")
def mechanism():
    return load_mechanism()


@pytest.fixture(scope="session")
def mech_model(mechanism):
    return mechanism_as_model(mechanism, 3000.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
