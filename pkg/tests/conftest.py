"""Shared helpers: random network factories and finite-difference oracles."""

import numpy as np
import pytest

from lula_lab.network import Network
from lula_lab.numerics import Rng


def random_network(rng: Rng, max_layers=3, max_units=10, input_dim=None,
                   output_dim=None, activation=None) -> Network:
    """Small random net with random layer sizes and nonzero biases."""
    n_hidden = int(rng.integers(0, max_layers))
    dims = [input_dim or int(rng.integers(1, 6))]
    for _ in range(n_hidden):
        dims.append(int(rng.integers(2, max_units + 1)))
    dims.append(output_dim or int(rng.integers(1, 4)))
    act = activation or ("relu", "selu", "tanh")[int(rng.integers(0, 3))]
    net = Network.init_random(dims, act, rng)
    # random biases exercise more of the affine path than the zero default
    biases = [b + 0.1 * rng.standard_normal(b.shape) for b in net.biases]
    return Network(net.specs, net.weights, biases)


def fd_param_gradient(f, theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of the parameters."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        hi = theta.copy()
        lo = theta.copy()
        hi[i] += eps
        lo[i] -= eps
        grad[i] = (f(hi) - f(lo)) / (2.0 * eps)
    return grad


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(expected)), 1e-12)
    return float(np.linalg.norm(actual - expected)) / scale


@pytest.fixture
def rng():
    return Rng(1234)
