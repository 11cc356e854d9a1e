import sys

import numpy as np
import pytest
from hypothesis import settings

from riskshare.probspace import FiniteProbSpace

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def u2():
    return FiniteProbSpace.uniform(2)


@pytest.fixture
def u3():
    return FiniteProbSpace.uniform(3)


@pytest.fixture
def u4():
    return FiniteProbSpace.uniform(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
