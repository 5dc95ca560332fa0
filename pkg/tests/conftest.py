import numpy as np
import pytest

from rankforge import synth_dataset
from rankforge.gbrt import TrainConfig


@pytest.fixture(scope="session")
def small_data():
    return synth_dataset(n=40, m=10, d=5, seed=3)


@pytest.fixture(scope="session")
def quick_config():
    return TrainConfig(num_leaves=8, min_data_in_leaf=5, learning_rate=0.1, max_trees=15,
                       early_stopping_rounds=10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
