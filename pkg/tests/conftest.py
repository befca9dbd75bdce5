import numpy as np
import pytest

from linac.classifier import ClassifierSpec, TrainConfig, train_classifier
from linac.datasets import make_synthetic
from linac.transforms import fit_normalization


@pytest.fixture(scope="session")
def small_data():
    x, y = make_synthetic(800, 16, key=1)
    xt, yt = make_synthetic(200, 16, key=2)
    return x, y, xt, yt


@pytest.fixture(scope="session")
def small_classifier(small_data):
    x, y, _, _ = small_data
    spec = ClassifierSpec(3, normalization=fit_normalization(x))
    return train_classifier(x, y, spec, TrainConfig.desk(epochs=16, batch_size=16), key=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    from .verdicts import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
