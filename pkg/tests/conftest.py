from __future__ import annotations

import numpy as np
import pytest

from nsmatch.core import dgp
from nsmatch.core.models.dataset import Dataset


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_dgp() -> dgp.DgpConfig:
    return dgp.DgpConfig(n=200, d_observed=6, d_latent=2, seed=3)


@pytest.fixture
def duplicated_controls() -> Dataset:
    """Every treated row has an exact control twin whose outcome is 2 lower."""
    X_t = np.array([[0.0, 1.0], [2.0, -1.0], [3.5, 0.5], [-1.0, -2.0]])
    Y_t = np.array([5.0, 1.0, 3.0, -1.0])
    X = np.vstack([X_t, X_t])
    T = np.r_[np.ones(4), np.zeros(4)]
    Y = np.r_[Y_t, Y_t - 2.0]
    mu0 = np.r_[Y_t - 2.0, Y_t - 2.0]
    return Dataset(X=X, T=T, Y=Y, mu0=mu0, mu1=mu0 + 2.0)
