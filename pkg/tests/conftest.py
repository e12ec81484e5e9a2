import numpy as np
import pytest

from lorank import genzoo

# Lines recorded by test_acceptance, echoed after the run.
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def zoo():
    return genzoo.default_zoo(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
