import numpy as np
import pytest

from focusfuse.network import init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_params():
    """Seeded random network parameters (untrained)."""
    return init_params(seed=7)


@pytest.fixture(scope="session")
def desk():
    """Desk-scale trained network plus training history (cached on disk)."""
    import desk as desk_module
    params, history, elapsed = desk_module.desk_trained(verbose=True)
    return params, history, elapsed
