import numpy as np
import pytest

from psstrat.dataset import ObservationalDataset
from psstrat.numkit import std_normal_cdf


def probit_dataset(rng, n=400, gamma=(0.0, 0.8, -0.5), beta=(-0.2, 0.5, 0.4), tau=0.5):
    """Two normal covariates; probit selection and probit outcome."""
    x = rng.standard_normal((n, 2))
    z = (rng.random(n) < std_normal_cdf(gamma[0] + x @ np.asarray(gamma[1:]))).astype(int)
    y = (rng.random(n) < std_normal_cdf(beta[0] + x @ np.asarray(beta[1:]) + tau * z)).astype(int)
    ids = [f"u{i:04d}" for i in range(n)]
    return ObservationalDataset(ids, z, y, x, ("x1", "x2"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def confounded(rng):
    return probit_dataset(rng)
