import numpy as np
import pytest
import torch

from motionssl.config import ModelConfig, TrainConfig
from motionssl.scene import generate_corpus, generate_synthetic_scene, get_dialect

torch.set_num_threads(1)


@pytest.fixture
def small_cfg():
    return ModelConfig(width=32, heads=4, ff_hidden=64, latent_count=8,
                       early_self_depth=1, decoder_depth=2,
                       projector_hidden=64, projector_out=16, k_modes=3,
                       head_depth=1)


@pytest.fixture
def tiny_train_cfg():
    return TrainConfig(epochs=2, batch_size=4, seed=0)


@pytest.fixture
def dialect_w():
    return get_dialect("W")


@pytest.fixture
def dialect_a():
    return get_dialect("A")


@pytest.fixture
def scenes_w(dialect_w):
    return [generate_synthetic_scene(seed, dialect_w, counts=(3, 4, 1), lane_points=6)
            for seed in range(8)]


@pytest.fixture
def scenes_a(dialect_a):
    return [generate_synthetic_scene(seed, dialect_a, counts=(3, 4, 0), lane_points=6)
            for seed in range(8)]


@pytest.fixture(scope="session")
def corpus_w_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus_w") / "scenes"
    generate_corpus(d, get_dialect("W"), n_scenes=8, base_seed=0,
                    counts=(3, 4, 1), lane_points=6)
    return d


@pytest.fixture(scope="session")
def corpus_a_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus_a") / "scenes"
    generate_corpus(d, get_dialect("A"), n_scenes=8, base_seed=100,
                    counts=(3, 4, 0), lane_points=6)
    return d


def rng(*key):
    return np.random.default_rng(list(key))
