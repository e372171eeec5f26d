import numpy as np
import pytest

from torsonet.graph import build_model
from torsonet.toy import write_toy_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def model4():
    return build_model(4, "relu", seed=0)


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """Small on-disk toy dataset: 4 classes x 6 images."""
    return write_toy_dataset(tmp_path_factory.mktemp("toy"), 6, seed=3)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
