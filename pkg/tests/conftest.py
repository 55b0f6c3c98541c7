import numpy as np
import pytest

from ngshrink.model import Dataset


@pytest.fixture
def small_data():
    """A fixed n=5, p=3 design."""
    rng = np.random.default_rng(20240501)
    return Dataset(rng.standard_normal((5, 3)), rng.standard_normal(5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, printed at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
