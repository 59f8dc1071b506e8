import numpy as np
import pytest

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from radet.data import ToyTaskConfig, make_toy_dataset
from radet.detector.model import RADetector


@pytest.fixture(scope="session")
def small_dataset():
    """Cheap toy task shared by unit tests (48/24 per class)."""
    return make_toy_dataset(ToyTaskConfig(
        n_train=48, n_test=24, seed=0, noise_std=0.08, fake_texture_mix=0.6))


@pytest.fixture(scope="session")
def small_model(small_dataset):
    """Briefly trained detector for persistence/inference tests."""
    model = RADetector(epochs=2, seed=0)
    model.fit(small_dataset.train_images, small_dataset.train_labels)
    return model


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
