import numpy as np
import pytest

from tvtsyn.config import small_config
from tvtsyn.model import TvtSynModel
from tvtsyn.weights import random_init


@pytest.fixture(scope="session")
def cfg():
    return small_config()


@pytest.fixture(scope="session")
def store(cfg):
    return random_init(0, cfg)


@pytest.fixture(scope="session")
def model(cfg, store):
    return TvtSynModel.from_store(store, cfg)


@pytest.fixture(scope="session")
def speaker(cfg):
    rng = np.random.default_rng(11)
    return rng.normal(0.0, 1.0, cfg.global_dim).astype(np.float32)


@pytest.fixture(scope="session")
def full_budget():
    """Parameter counts of the full-size config (computed once per session)."""
    from tvtsyn.config import ModelConfig
    from tvtsyn.weights import parameter_budget

    return parameter_budget(random_init(0, ModelConfig()))


def random_wave(seed, n_samples, amp=0.5):
    rng = np.random.default_rng(seed)
    return rng.uniform(-amp, amp, n_samples).astype(np.float32)
