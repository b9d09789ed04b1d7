import warnings

import numpy as np
import pytest

from anchorattn.anchor import AnchorCountWarning

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _quiet_anchor_count():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AnchorCountWarning)
        yield


@pytest.fixture
def record_criterion():
    """Register a one-line acceptance verdict for the terminal summary."""

    def record(name, passed, detail):
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
