import numpy as np
import pytest

from snnet.engine import ParamStore
from snnet.model import SNNet, desk_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_cfg():
    return desk_config()


@pytest.fixture
def desk_model(desk_cfg):
    return SNNet(desk_cfg, ParamStore(dtype=np.float64), seed=0)


@pytest.fixture
def tiny_signal(rng):
    # ~0.1 s of band-limited noise, enough for a handful of frames
    return rng.standard_normal(1600) * 0.1
