import numpy as np
import pytest

from rgbsde.models import DriverSpec


@pytest.fixture
def linear_driver():
    return DriverSpec(f=lambda t, x, y, z: -y, g=lambda t, x, y: -y, lam=0.0, mu=-1.0, beta=-1.0, growth=1.0)


@pytest.fixture
def zero_driver():
    return DriverSpec(f=lambda t, x, y, z: np.zeros_like(y), x_dependent=False)
