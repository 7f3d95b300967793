import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from lidarguard._backend import HAVE_NUMBA, get_backend, set_backend  # noqa: E402
from lidarguard.cloud import load_sensor  # noqa: E402

BACKENDS = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]


@pytest.fixture(scope="session")
def hdl64():
    return load_sensor("hdl64")


@pytest.fixture(scope="session")
def vlp16():
    return load_sensor("vlp16")


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run a test once per kernel backend."""
    old = get_backend()
    set_backend(request.param)
    yield request.param
    set_backend(old)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
