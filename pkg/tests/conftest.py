import time

import numpy as np
import pytest

from equiguide.datasets import gen_sym_shapes_grid, mirror_symmetrize
from equiguide.equi import train_autoencoder_augmented
from equiguide.gmm import GMMPrior, sample_gmm
from equiguide.groups import make_group
from equiguide.models import AnalyticGmmScore, train_denoiser
from equiguide.schedule import make_linear_schedule


@pytest.fixture(scope="session")
def sched1000():
    return make_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture(scope="session")
def shapes_train():
    return gen_sym_shapes_grid(16, 512, np.random.default_rng(1)).items


@pytest.fixture(scope="session")
def shapes_held():
    return gen_sym_shapes_grid(16, 500, np.random.default_rng(2)).items


@pytest.fixture(scope="session")
def shapes_test():
    # sequential generation: the first k images equal any shorter run
    return gen_sym_shapes_grid(16, 20, np.random.default_rng(77)).items


@pytest.fixture(scope="session")
def grid_denoiser(shapes_train, sched1000):
    t0 = time.perf_counter()
    model = train_denoiser(
        shapes_train, sched1000,
        {"steps": 2200, "batch_size": 32, "lr": 2e-3, "seed": 0, "width": 16},
    )
    model.train_seconds = time.perf_counter() - t0
    return model


@pytest.fixture(scope="session")
def grid_probe(shapes_train):
    action = make_group({"group": "flip-h"})
    t0 = time.perf_counter()
    probe = train_autoencoder_augmented(
        shapes_train, action,
        {"steps": 3000, "batch_size": 32, "lr": 2e-3, "seed": 0,
         "channels": 8, "latent_channels": 6, "f": "autoencoder"},
    )
    probe.meta["train_seconds"] = time.perf_counter() - t0
    return probe


@pytest.fixture(scope="session")
def ring_prior():
    k = 6
    angles = np.linspace(0, 2 * np.pi, k, endpoint=False) + 0.3
    means = np.stack([np.cos(angles), np.sin(angles), np.zeros(k), np.zeros(k)], axis=1)
    prior = GMMPrior(np.full(k, 1.0 / k), means, np.tile(0.02 * np.eye(4), (k, 1, 1)))
    return mirror_symmetrize(prior, (0, 1))


@pytest.fixture(scope="session")
def ring_model(ring_prior, sched1000):
    return AnalyticGmmScore(ring_prior, sched1000)


@pytest.fixture(scope="session")
def ring_probe(ring_prior):
    action = make_group({"group": "permutation", "perm": [1, 0, 2, 3]})
    data = sample_gmm(ring_prior, 1024, np.random.default_rng(11))
    t0 = time.perf_counter()
    probe = train_autoencoder_augmented(
        data, action,
        {"steps": 3000, "batch_size": 64, "lr": 2e-3, "seed": 0,
         "hidden": [64, 64], "latent_dim": 2, "f": "autoencoder"},
    )
    probe.meta["train_seconds"] = time.perf_counter() - t0
    return probe
