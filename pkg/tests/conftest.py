import sys
import numpy as np
import pytest

from car_heavytail import _backend


@pytest.fixture(params=sorted(_backend.implementations()))
def kernels(request):
    """Each importable kernel implementation (compiled and numpy fallback)."""
    return _backend.implementations()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LOG", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
