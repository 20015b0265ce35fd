import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from swarmloc import synthetic

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def library():
    return synthetic.robot_library()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def solid_rgba(w, h, color=(200, 50, 50), alpha=255):
    img = np.zeros((h, w, 4), dtype=np.uint8)
    img[..., :3] = color
    img[..., 3] = alpha
    return img
