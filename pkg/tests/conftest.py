import os
import warnings

import pytest
from hypothesis import HealthCheck, settings

from polcoh.errors import TWAValidityWarning

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(autouse=True)
def _quiet_validity_warning():
    # the desk and paper grids sit knowingly between the hard and soft TWA limits
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", category=TWAValidityWarning)
        yield


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: one primary acceptance criterion")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def record_criterion(request):
    """Call with (ok, detail); logs one PASS/FAIL line for the current criterion."""

    def record(ok, detail):
        name = request.node.name.removeprefix("test_")
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        assert ok, detail

    return record
