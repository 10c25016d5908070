"""Shared fixtures: simulated datasets and fitted models reused across
test modules.  Session scope keeps the expensive fits to one each."""

import numpy as np
import pytest

from ivbounds.data import Dataset, validate
from ivbounds.gaussian import fit_joint_mle, fit_two_step
from ivbounds.simulate import DgpConfig, sample


@pytest.fixture(scope="session")
def tobit_config():
    return DgpConfig(n=1000)


@pytest.fixture(scope="session")
def tobit_data(tobit_config):
    return sample(tobit_config, 0)


@pytest.fixture(scope="session")
def tobit_two_step(tobit_data):
    return fit_two_step(tobit_data, "tobit")


@pytest.fixture(scope="session")
def tobit_joint(tobit_data):
    return fit_joint_mle(tobit_data, "tobit")


@pytest.fixture(scope="session")
def probit_data():
    return sample(DgpConfig(n=4000, kind="probit"), 5)


@pytest.fixture(scope="session")
def probit_two_step(probit_data):
    return fit_two_step(probit_data, "probit")


@pytest.fixture(scope="session")
def big_tobit_fit():
    """Two-step fit at n=100000 where estimates sit close to the design
    values (theta1, sigma_u2, sigma_v2, sigma_uv) = (2, 5, 2, -2)."""
    d = sample(DgpConfig(n=100_000), 17)
    return fit_two_step(d, "tobit")


def make_raw_dataset(y, x, w, z) -> Dataset:
    """Unvalidated dataset from plain lists, for hand-sized examples."""
    return Dataset(np.asarray(y, float), np.asarray(x, float),
                   np.atleast_2d(np.asarray(w, float)),
                   np.atleast_2d(np.asarray(z, float)))


def small_valid_tobit(n: int = 80, seed: int = 3) -> Dataset:
    rng = np.random.default_rng(seed)
    z = rng.normal(size=n)
    w = np.column_stack([np.ones(n)])
    v = rng.normal(size=n)
    x = z + v
    y = np.maximum(2.0 * x + 1.0 + rng.normal(size=n) - v, 0.0)
    return validate(Dataset(y, x, w, z.reshape(-1, 1)), "tobit")
