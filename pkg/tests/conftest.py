import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from shiftquant.oracle import GaussianMixtureModel  # noqa: E402


@pytest.fixture(scope="session")
def gauss():
    """The symmetric binary model with means -(1,1) and +(1,1)."""
    return GaussianMixtureModel.isotropic(np.array([[-1.0, -1.0], [1.0, 1.0]]))


@pytest.fixture(scope="session")
def gauss3():
    return GaussianMixtureModel.isotropic(np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]))
