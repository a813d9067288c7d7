import numpy as np
import pytest

from weightprov.containers import ArchManifest
from weightprov.model import random_token_batch
from weightprov.training import TrainConfig, init_model


@pytest.fixture(scope="session")
def toy_arch() -> ArchManifest:
    return ArchManifest.with_identity_roles(
        "glu-transformer", L=2, d_emb=8, d_mlp=16, V=32, n_heads=2
    )


@pytest.fixture(scope="session")
def toy_model(toy_arch):
    return init_model(toy_arch, seed=7)


@pytest.fixture(scope="session")
def toy_batch(toy_arch):
    return random_token_batch(toy_arch.V, N=2, s=8, seed=3)


@pytest.fixture(scope="session")
def quick_cfg():
    return TrainConfig(steps=150, batch_size=64)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240809)
