import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_homography(rng, scale=0.3):
    """Well-conditioned random homography near the identity."""
    m = np.eye(3) + scale * rng.normal(size=(3, 3))
    m[2, :2] *= 0.05
    m[2, 2] = 1.0
    return m
