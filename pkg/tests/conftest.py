import warnings

import numpy as np
import pytest

from stochmed.sim import dgp5_law, mtp_toy_law


@pytest.fixture(scope="session")
def law5():
    return dgp5_law()


@pytest.fixture(scope="session")
def mtp_law():
    return mtp_toy_law()


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with np.errstate(all="ignore"):
        yield


# -- acceptance summary: one PASS/FAIL line per criterion ----------------------

ACCEPTANCE_LINES = []  # (criterion number, line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
