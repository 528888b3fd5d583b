import numpy as np
import pytest

from dapinet.model import DerParams, aggregate, make_coupling

# 5-DER / 3-MG reference system: MG1 = {0, 1}, MG2 = {2, 3}, MG3 = {4}.
# Droop gains follow the published table (m doubled-rating unit is DER 2,
# 0-indexed); the remaining parameters are documented toolkit defaults on a
# desk-scale per-unit power base.
M_GAINS = [1e-4, 1e-4, 5e-5, 1e-4, 1e-4]
N_GAINS = [2e-4, 2e-4, 1e-4, 2e-4, 2e-4]
LINKS5 = [(0, 1), (2, 3), (1, 2), (3, 4), (4, 0)]


def der_params_5(s_bar=1.5, q_star=1.0):
    return [DerParams(m=M_GAINS[i], n=N_GAINS[i], q_star=q_star, s_bar=s_bar)
            for i in range(5)]


@pytest.fixture
def ders5():
    return der_params_5()


@pytest.fixture
def coupling5():
    return make_coupling(5, LINKS5, a=1.0, b=1.0)


@pytest.fixture
def sys5(ders5, coupling5):
    return aggregate(ders5, coupling5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
