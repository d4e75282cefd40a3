import numpy as np
import pytest

from fedminimax.problems import HeterogeneityProfile, QuadraticProblem, make_quadratic


def scalar_problem(q=-1.0, b=1.0, m=2.0, sigma=0.0, x0=0.0, y0=0.0):
    """Single client f(x, y) = q x^2/2 + b x y - m y^2/2."""
    return QuadraticProblem([[[q]]], [[[b]]], [[[m]]], [[0.0]], [[0.0]], sigma=sigma,
                            x0=[x0], y0=[y0])


@pytest.fixture
def scalar():
    return scalar_problem()


@pytest.fixture
def ncsc():
    return make_quadratic(4, 5, 5, "NC_SC", HeterogeneityProfile(0.3, 0.3), 0.2, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
