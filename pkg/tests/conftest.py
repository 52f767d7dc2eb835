import numpy as np
import pytest

from wncs.config import default_scenario
from wncs.simulator import initial_estimate

# Lines appended by the acceptance tests; printed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture(scope="session")
def x_hat_0(scenario):
    return initial_estimate(scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
