from pathlib import Path

import numpy as np
import pytest

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def golden():
    with np.load(GOLDEN / "arrays.npz") as z:
        return dict(z)


@pytest.fixture(scope="session")
def golden_dir():
    return GOLDEN


# acceptance lines collected by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
