import numpy as np
import pytest

from qfc.control import CostSpec
from qfc.filtering import ModelSpec
from qfc.operators import SIGMA_X, SIGMA_Y, SIGMA_Z

I2 = np.eye(2, dtype=complex)
Z2 = np.zeros((2, 2), dtype=complex)


def dephasing_model(kappa=1.0, u_max=10.0, convention="operator"):
    """Measured qubit with full Hamiltonian control, L = (kappa/2) sigma_z."""
    return ModelSpec(
        dim=2,
        hamiltonian=Z2,
        controls=(0.5 * SIGMA_X, 0.5 * SIGMA_Y, 0.5 * SIGMA_Z),
        coupling=0.5 * kappa * SIGMA_Z,
        u_max=np.full(3, float(u_max)),
        convention=convention,
    )


def benchmark_cost():
    """Cost (1/2)|u|^2 with terminal (1/2)(1 - z)."""
    return CostSpec.lq(np.eye(3), [Z2] * 3, Z2, 0.5 * (I2 - SIGMA_Z))


@pytest.fixture(scope="session")
def qubit_model():
    return dephasing_model()


@pytest.fixture(scope="session")
def qubit_cost():
    return benchmark_cost()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
