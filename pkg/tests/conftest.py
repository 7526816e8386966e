import numpy as np
import pytest

from spectral_mmd.kernels import Kernel
from spectral_mmd.spectral import Regularizer, SpectralFactors
from spectral_mmd.testing import split_samples


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_instance(rng, n=8, m=8, s=6, d=2, shift=0.5):
    """Random split with ``n``/``m`` main rows and ``s`` mixed held-out rows."""
    X = rng.normal(size=(n + s, d))
    Y = rng.normal(size=(m + s, d)) + shift
    return split_samples(X, Y, s, rng)


def operator_for(split, kernel, reg):
    factors = SpectralFactors.from_samples(kernel, split.pooled, split.z)
    return factors.operator(reg, split.n)


@pytest.fixture
def instance(rng):
    split = make_instance(rng)
    kernel = Kernel("gaussian", 1.0)
    reg = Regularizer("tikhonov", 0.1)
    return split, kernel, reg, operator_for(split, kernel, reg)
