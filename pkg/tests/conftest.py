import numpy as np
import pytest

from cvteleport import fock


def random_damped_state(basis: fock.BasisSpec, seed: int, damp: float = 0.5
                        ) -> fock.FockVector:
    """Random normalized state with exponentially suppressed tails.

    The decay keeps the weight near the cutoff negligible, which is the
    regime the truncation contracts cover.
    """
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    tensor = amps.reshape(basis.shape)
    scale = damp ** np.arange(basis.levels)
    for ax in range(basis.n_modes):
        shape = [1] * basis.n_modes
        shape[ax] = basis.levels
        tensor = tensor * scale.reshape(shape)
    flat = tensor.reshape(-1)
    return fock.FockVector(basis, flat / np.linalg.norm(flat))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
