import os

import numpy as np
import pytest

from reflectopt import shapes

# published timing budgets assume an 8-core desktop; prorate for this host
CORES = os.cpu_count() or 1


def prorated(seconds: float) -> float:
    return seconds * max(1.0, 8.0 / CORES)


@pytest.fixture(scope="session")
def octa():
    return shapes.normalized(shapes.octahedron())


@pytest.fixture(scope="session")
def small_sphere():
    return shapes.normalized(shapes.icosphere(2))


@pytest.fixture(scope="session")
def plate():
    return shapes.plate()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
