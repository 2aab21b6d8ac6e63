import numpy as np
import pytest

from portsens.market import MarketModel, constant, indicator
from portsens.paths import TimeGrid, simulate


@pytest.fixture(scope="session")
def ens1d():
    """8000 one-dimensional paths on a 64-step unit-horizon grid."""
    return simulate(TimeGrid(1.0, 64), n=1, M=8000, seed=101)


@pytest.fixture(scope="session")
def ens2d():
    return simulate(TimeGrid(1.0, 64), n=2, M=8000, seed=102)


@pytest.fixture(scope="session")
def det2d_model():
    """Complete two-asset market with constant coefficients."""
    return MarketModel(d=2, n=2,
                       mu=constant([0.08, 0.05]),
                       sigma=constant([[0.2, 0.05], [0.0, 0.15]]),
                       rate=constant([0.01]))


@pytest.fixture(scope="session")
def switch_model():
    """Unit volatility, price of risk 1 on {W < 0} and 0 elsewhere."""
    return MarketModel(d=1, n=1,
                       mu=indicator(0, 0.0, [0.0], [1.0]),
                       sigma=constant([[1.0]]))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
