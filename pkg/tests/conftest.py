import numpy as np
import pytest
from hypothesis import settings

from becnet.model import NetworkSpec

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_spec(rng, M, N, scale=1.0, lam_scale=1.0):
    A = rng.normal(size=(M, M)) * scale
    J = (A + A.T) / 2
    np.fill_diagonal(J, 0.0)
    return NetworkSpec(J, rng.normal(size=M) * lam_scale, N)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
