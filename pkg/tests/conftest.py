import numpy as np
import pytest

from superct.geometry import Image, parallel_beam
from superct.phantom import shepp_logan


@pytest.fixture(scope="session")
def phantom64():
    return shepp_logan(64, 64)


@pytest.fixture(scope="session")
def phantom128():
    return shepp_logan(128, 128)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def disk_image(rows=128, cols=128, pixel_size=1.0, radius=30.0, mu=0.02):
    x = (np.arange(cols) - (cols - 1) / 2) * pixel_size
    y = ((rows - 1) / 2 - np.arange(rows)) * pixel_size
    X, Y = np.meshgrid(x, y)
    return Image(np.where(X**2 + Y**2 <= radius**2, mu, 0.0))


@pytest.fixture
def small_parallel():
    return parallel_beam(60, 48, 32, 32, 1.0)
