import pytest

from optmm.model import MarketState

from helpers import make_params


@pytest.fixture(scope="session")
def ref_params():
    """Reference stochastic-vol parameter set used across the suite."""
    return make_params()


@pytest.fixture(scope="session")
def ref_state():
    return MarketState(spot=10.0, variance=0.0225)
