import numpy as np
import pytest

from oracles import rejection_sample

F1 = np.sqrt(3.0)


def product_density(a11):
    """``rho(x, y) = 1 + a11 f_1(x) f_1(y)``."""
    def rho(p):
        return 1.0 + a11 * 3.0 * (2 * p[:, 0] - 1) * (2 * p[:, 1] - 1)
    return rho


def sample_product_density(a11, n, seed):
    return rejection_sample(product_density(a11), 2, n, np.random.default_rng(seed), 1.0 + 3.0 * abs(a11))


@pytest.fixture(scope="session")
def correlated_sample():
    """100 000 points from ``1 + 0.5 f_1(x) f_1(y)``."""
    return sample_product_density(0.5, 100_000, 2024)
