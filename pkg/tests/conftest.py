import numpy as np
import pytest

from core.grid import make_grid
from core.profile import ShearProfile, build_profile


KOLMOGOROV = {"family": "kolmogorov", "period": 8.0}


def fourier_mode(grid, m: int = 1):
  """exp(i·2πm·y/p) on the grid nodes."""
  return np.exp(2j * np.pi * m * grid.nodes / grid.period)


@pytest.fixture(scope="session")
def kolmogorov():
  return build_profile(KOLMOGOROV)


@pytest.fixture(scope="session")
def flat():
  """b ≡ 0.3 on the same period, no critical structure."""
  return ShearProfile.constant(0.3, 8.0)


@pytest.fixture
def grid32():
  return make_grid(32, 8.0)


@pytest.fixture
def grid64():
  return make_grid(64, 8.0)


@pytest.fixture
def grid128():
  return make_grid(128, 8.0)


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
  monkeypatch.setenv("OSCAR_THREADS", "1")
