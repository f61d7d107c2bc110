import numpy as np
import pytest

from gammanoise import kernels

ACCEPTANCE_LINES = {}


def record_acceptance(number, title, passed, detail):
    """Store (and print) one acceptance line; shown again in the terminal summary."""
    line = f"AC{number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    return request.param
