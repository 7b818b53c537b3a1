import time

import numpy as np
import pytest

from mtsvalid import CouplingSpec, TrainConfig, gen_coupled_process, train
from mtsvalid.core import noise_for_fraction

# Full-size coupled process used by the acceptance suite and the heavier
# fusion scenarios; trained once per session.
REF_SEED, REF_T, REF_S, REF_SPLIT = 1, 20_000, 8, 15_000
NOISE_FRACTION = 0.02


def coupled_dataset(seed, T=REF_T, S=REF_S):
    spec = noise_for_fraction(seed, T, CouplingSpec.default(S), NOISE_FRACTION)
    frame, driver = gen_coupled_process(seed, T, S, spec)
    return spec, frame, driver


@pytest.fixture(scope="session")
def reference_data():
    return coupled_dataset(REF_SEED)


@pytest.fixture(scope="session")
def reference_fit(reference_data):
    """Default-config model on the first 15k samples, with its training wall time in seconds."""
    _, frame, _ = reference_data
    t0 = time.perf_counter()
    model = train([frame.slice(0, REF_SPLIT)], TrainConfig(seed=REF_SEED))
    return model, time.perf_counter() - t0


@pytest.fixture(scope="session")
def reference_model(reference_fit):
    return reference_fit[0]


@pytest.fixture(scope="session")
def small_data():
    return coupled_dataset(11, T=6000)


@pytest.fixture(scope="session")
def small_model(small_data):
    """Quick model for qualitative checks; not accurate enough for acceptance thresholds."""
    _, frame, _ = small_data
    return train([frame.slice(0, 4500)], TrainConfig(epochs=60, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
