import numpy as np
import pytest

from demgrade.synth import synthesize_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    """The 80-image geometric mini-dataset, generated once per session."""
    return synthesize_dataset(tmp_path_factory.mktemp("syn"), per_class=20, seed=0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
