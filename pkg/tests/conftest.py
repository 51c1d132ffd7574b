import numpy as np
import pytest

from vstpp.model import ModelConfig


def tiny_config(**overrides) -> ModelConfig:
    """Narrow, shallow model that still exercises every stage."""
    base = dict(side=32, c=8, d=16, heads=2, convertor_layers=2, decoder_layers=(1, 1, 1), encoder_layers=1)
    base.update(overrides)
    return ModelConfig(**base)


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f over every entry of x."""
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
