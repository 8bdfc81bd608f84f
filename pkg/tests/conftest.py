import numpy as np
import pytest

from kernelcrit.model import HostPopulation, KernelFamily, KernelSpec, ModelParams

ORIGINAL = ModelParams(0.001, 3.0, KernelSpec(KernelFamily.EXPONENTIAL, 0.03), 5.0, 2.5, 1.772, 0.858)


def small_params(family="exp", kappa=None, alpha=0.02, beta=0.8):
    kappa = kappa if kappa is not None else {"exp": 0.3, "pow": 1.5, "gauss": 0.05}[family]
    return ModelParams(alpha, beta, KernelSpec(KernelFamily(family), kappa), 2.0, 1.0, 1.5, 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def original():
    return ORIGINAL


@pytest.fixture
def pop10(rng):
    return HostPopulation.uniform(10, 10.0, rng)
