import sys

import pytest

from lawsonflow.cone_params import derive_cone_params, spectral_exponents
from lawsonflow.profile import minimal_profile


@pytest.fixture(scope="session")
def p44():
    return derive_cone_params(4, 4)


@pytest.fixture(scope="session")
def e44(p44):
    return spectral_exponents(p44, 4)


@pytest.fixture(scope="session")
def prof44(p44):
    return minimal_profile(p44, 1.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
