import numpy as np
import pytest

from msmcalib.camera import Intrinsics

from helpers import ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def K():
    return Intrinsics(5000.0, 5000.0, 2000.0, 1500.0, 4000, 3000)
