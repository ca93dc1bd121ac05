"""Shared oracles: central finite differences and relative error."""

import numpy as np
import pytest

from lisalab.model import ModelConfig, build_model


def rel_err(analytic, numeric):
    """Elementwise |a - n| / max(|a|, |n|, 1e-8)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return np.abs(a - n) / denom


def fd_gradient(f, tensor, h=1e-5):
    """Central finite differences of the scalar f() w.r.t. every element."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        dn = f()
        flat[i] = old
        gflat[i] = (up - dn) / (2.0 * h)
    return grad


@pytest.fixture
def desk_config():
    return ModelConfig(64, 32, 64, 4, 4)


@pytest.fixture
def tiny_config():
    return ModelConfig(32, 16, 32, 4, 2)


@pytest.fixture
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=3)
