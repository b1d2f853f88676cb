import math

import pytest

from optomech.core import nominal_system

TWO_PI = 2.0 * math.pi
OMEGA_M = TWO_PI * 945e3


@pytest.fixture
def nominal():
    return nominal_system()
