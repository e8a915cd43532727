import numpy as np
import pytest
from hypothesis import settings

from bmox import DyadicGrid, GridFunction

settings.register_profile("default", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("default")


@pytest.fixture
def g1():
    """1D grid over [0, 1) with 4 cells."""
    return DyadicGrid(1, 2)


@pytest.fixture
def ramp(g1):
    return GridFunction(g1, [0.0, 1.0, 2.0, 3.0])


def brute_intervals(n):
    """All (start, length) pairs of a 1D grid with n cells."""
    return [(a, k) for k in range(1, n + 1) for a in range(n - k + 1)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
