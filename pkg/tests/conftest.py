import numpy as np
import pytest

from convomeasure.gaussian import GaussianMeasure, gaussian_from_precision
from convomeasure.interaction import GeneratorSet, InteractionMap, build_interacting_measure


@pytest.fixture
def reference_measure():
    """dim_f = 2, r = 1, B_m = B_g = I, T = diag(1, -1)."""
    zeta = InteractionMap(GeneratorSet.preset("diag2"))
    return build_interacting_measure(GaussianMeasure.standard(2), GaussianMeasure.standard(1), zeta)


@pytest.fixture
def weak_measure():
    """Reference instance with var_g = 0.09."""
    zeta = InteractionMap(GeneratorSet.preset("diag2"))
    mu_g = gaussian_from_precision(np.array([[1.0 / 0.09]]))
    return build_interacting_measure(GaussianMeasure.standard(2), mu_g, zeta)


def random_spd(rng, dim, shift=None):
    a = rng.standard_normal((dim, dim))
    return a @ a.T + (dim if shift is None else shift) * np.eye(dim)
