import numpy as np
import pytest
from scipy.special import expit

from drsandwich import Dataset
from drsandwich.simulation import DGPConfig, generate_sample


def random_dataset(rng, n, with_binary=True):
    """Small observational dataset with two covariates and a linear outcome."""
    z1 = rng.normal(0.0, 1.0, n)
    z2 = (rng.random(n) < 0.4).astype(float) if with_binary else rng.normal(size=n)
    e = expit(-0.2 + 0.6 * z1 - 0.5 * z2)
    x = (rng.random(n) < e).astype(float)
    # keep both arms populated in tiny samples
    x[0], x[1] = 0.0, 1.0
    y = 2.0 + 1.5 * z1 - z2 + 0.8 * x + 0.5 * x * z1 + rng.normal(size=n)
    return Dataset(x, y, {"Z1": z1, "Z2": z2})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cs_sample():
    return generate_sample(DGPConfig(n=800, sigma=400, seed=20240101), 7)


@pytest.fixture
def toy(rng):
    return random_dataset(rng, 60)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
