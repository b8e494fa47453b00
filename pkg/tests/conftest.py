import datetime as dt
import functools

import numpy as np
import pytest

from epitesting.ingest import select_regions_for_validation
from epitesting.simulator import WorldSpec, simulate_world

D0 = dt.date(2020, 3, 1)


@functools.lru_cache(maxsize=None)
def synthetic_world(seed=1, n_regions=20):
    """Default up-saturating world (alpha = 0.002), cached across tests."""
    return tuple(simulate_world(WorldSpec(n_regions=n_regions, seed=seed)))


@pytest.fixture(scope="session")
def world_records():
    return list(synthetic_world())


@pytest.fixture(scope="session")
def world_selected(world_records):
    return select_regions_for_validation(world_records)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
