import numpy as np
import pytest

from cfrsma.config import SimConfig
from cfrsma.topology import drop_network


@pytest.fixture(scope="session")
def small_config():
    return SimConfig(M=4, N=2, K=4, L=2, tau_c=40, velocity_kmh=40.0,
                     drops=1, realizations=1, seed=7).resolve()


@pytest.fixture(scope="session")
def small_topology(small_config):
    rng = np.random.default_rng(np.random.SeedSequence(small_config.seed, spawn_key=(0,)))
    return drop_network(small_config, rng)
