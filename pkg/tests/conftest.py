import numpy as np
import pytest

from se2bis.clebsch import build_table
from se2bis.harmonics import product_quadrature
from se2bis.projection import build_projection_operator, random_smooth_image


@pytest.fixture(scope="session")
def cg6():
    return build_table(6)


@pytest.fixture(scope="session")
def cg8():
    return build_table(8)


@pytest.fixture(scope="session")
def cg16():
    return build_table(16)


@pytest.fixture(scope="session")
def quad8():
    return product_quadrature(8)


@pytest.fixture(scope="session")
def quad16():
    return product_quadrature(16)


@pytest.fixture(scope="session")
def op16_101(quad16):
    return build_projection_operator(16, quad16, 1.0, 101)


@pytest.fixture(scope="session")
def op8_41(quad8):
    return build_projection_operator(8, quad8, 1.0, 41)


@pytest.fixture(scope="session")
def image0():
    """Default-parameter random test image (101 x 101, bandlimit 16)."""
    return random_smooth_image(0)


@pytest.fixture(scope="session")
def small_image():
    """A small, quick image matched to bandlimit 8 on a 41-grid."""
    return random_smooth_image(5, n=41, margin=8, blur_sigma=4.0, gen_bandlimit=8, proj_bandlimit=8)


def rng(seed=0):
    return np.random.default_rng(seed)
