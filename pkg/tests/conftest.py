import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from mopasym.models import REFERENCE  # noqa: E402
from mopasym.symbol import SymbolPair  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: dict[int, str] = {}


def hermitian_pair() -> SymbolPair:
    """Positive definite, non-diagonal ``A`` with coupled ``B``."""
    return SymbolPair([[1.0, 0.3], [0.3, 0.8]], [[0.0, 0.5], [0.5, 1.0]])


@pytest.fixture(params=sorted(REFERENCE))
def reference(request):
    return request.param, REFERENCE[request.param]()


@pytest.fixture
def s1():
    return REFERENCE["S1"]()


@pytest.fixture
def d2():
    return REFERENCE["D2"]()


@pytest.fixture
def h2():
    return REFERENCE["H2"]()


@pytest.fixture
def p2():
    return REFERENCE["P2"]()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
