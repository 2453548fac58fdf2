import math

import numpy as np
import pytest

from rbsim.model import builtin_model


@pytest.fixture
def ou_model():
    """Kernel-free linear drift, sigma = sqrt(2); tau0 = 0.5."""
    return builtin_model("ou", alpha=1.0, sigma=math.sqrt(2.0))


@pytest.fixture
def ou_sine_model():
    """Linear drift plus bounded sine kernel."""
    return builtin_model("ou_sine", alpha=1.0, eps=0.1, sigma=math.sqrt(2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240808)
