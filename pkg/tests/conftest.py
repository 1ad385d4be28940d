import numpy as np
import pytest

from addrlab.numerics import Rng


def unit_rows(rng, n, d):
    X = rng.normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return Rng(1234)
