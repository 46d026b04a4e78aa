import numpy as np
import pytest
import torch

# single-threaded torch keeps timings and reductions reproducible in CI
torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cube(rng, h, w, b):
    from unmixsr.types import HSICube
    return HSICube(rng.uniform(0.0, 1.0, size=(h, w, b)))
