import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from voxfc.covkernels import RegionGeometry, RegionParams
from voxfc.crosscorr import PooledTheta
from voxfc.simulator import SeedSpec, TrueModel

settings.register_profile("voxfc", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("voxfc")

BASE1 = RegionParams(0.4, 0.3, 0.3, 1.0, 0.3)
BASE2 = RegionParams(0.4, 0.3, 0.3, 5.0, 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def base_theta():
    return PooledTheta(BASE1, BASE2, 0.3)


def random_geom(rng, n, offset=0.0):
    return RegionGeometry(offset + rng.random((n, 3)))


def random_params(rng, phi=None):
    w = rng.dirichlet([2.0, 2.0, 2.0])
    w = np.maximum(w, 1e-3)
    return RegionParams.normalized(*w, psi=float(rng.uniform(0.1, 10.0)),
                                   phi=float(phi if phi is not None else rng.uniform(0.01, 0.99)))


@pytest.fixture
def small_model(rng):
    g1 = random_geom(rng, 3)
    g2 = random_geom(rng, 2, offset=2.0)
    return TrueModel(BASE1, BASE2, np.array([0.5, 0.5]), 20, geom1=g1, geom2=g2)


@pytest.fixture
def seed():
    return SeedSpec(2024)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
