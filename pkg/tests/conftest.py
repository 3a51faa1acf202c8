import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(gen, dim, scale=1.0):
    """Random symmetric positive-definite matrix with bounded conditioning."""
    a = gen.normal(size=(dim, dim))
    return scale * (a @ a.T / dim + np.eye(dim))


def relative_error(approx, exact, floor=1e-12):
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    return np.linalg.norm(approx - exact) / max(np.linalg.norm(exact), floor)
