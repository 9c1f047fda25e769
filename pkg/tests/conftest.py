import numpy as np
import pytest

from tbsbm.bath import BathSpec, ChainCoefficients, Support, chain_coefficients
from tbsbm.ed import DenseModel


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def tiny_two_bath_model(s=0.5, alpha_z=0.05, alpha_x=0.03, l=2, n_ph=4,
                        bias=2e-3, support=Support.FULL_LINE):
    cz = chain_coefficients(BathSpec(s=s, alpha=alpha_z), l, support)
    cx = chain_coefficients(BathSpec(s=s, alpha=alpha_x), l, support)
    return DenseModel(chain_z=cz, chain_x=cx, n_ph=n_ph, bias=bias)


def random_tiny_model(rng, max_l=2, max_n_ph=6):
    """Random chain coefficients drawn directly; bias splits the doublet."""
    l_z = int(rng.integers(1, max_l + 1))
    l_x = int(rng.integers(1, max_l + 1))
    n_ph = int(rng.integers(3, max_n_ph + 1))

    def chain(length):
        omegas = rng.uniform(0.5, 2.0, size=length)
        hops = rng.uniform(0.1, 0.5, size=max(length - 1, 0))
        eta = rng.uniform(0.005, 0.2)
        return ChainCoefficients(omegas=omegas, hops=hops, eta=eta)

    bias = float(rng.uniform(1e-3, 1e-2) * rng.choice([-1.0, 1.0]))
    return DenseModel(chain_z=chain(l_z), chain_x=chain(l_x), n_ph=n_ph, bias=bias)
