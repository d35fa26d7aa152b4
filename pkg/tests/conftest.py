import numpy as np
import pytest

from tokenpool.config import ModelConfig
from tokenpool.model import init_model


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def small_config(**overrides) -> ModelConfig:
    base = dict(
        dim=32,
        layers=3,
        heads=4,
        k=2,
        out_dim=48,
        pos_grid_w=4,
        pos_grid_h=4,
        dilation_rates=[1, 2],
        scales=[1.0],
        seed=7,
    )
    base.update(overrides)
    return ModelConfig(**base).validate()


@pytest.fixture
def small_model():
    return init_model(small_config())
