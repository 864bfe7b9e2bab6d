import numpy as np
import pytest

from stochbt import StochasticLinearSystem


def random_system(rng, n, m=1, p=1, q=1, *, shift=-1.0, noise=0.3, rho=None):
    """Random system with spectrum of ``A`` pushed left by ``shift``."""
    A = rng.standard_normal((n, n)) / np.sqrt(n) + shift * np.eye(n)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    N = tuple(noise * rng.standard_normal((n, n)) / np.sqrt(n) for _ in range(q))
    if q == 2 and rho is not None:
        K = np.array([[1.0, rho], [rho, 1.0]])
    else:
        G = rng.standard_normal((q, q))
        K = G @ G.T / q + np.eye(q)
    return StochasticLinearSystem(A, B, C, N, K)


def scalar_system(a, b=1.0, c=1.0, nu=0.0):
    return StochasticLinearSystem([[a]], [[b]], [[c]], ([[nu]],), [[1.0]])


def random_symmetric(rng, n):
    X = rng.standard_normal((n, n))
    return X + X.T


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
