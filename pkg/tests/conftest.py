from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from paneitz.geometry import build_s2xs2, build_sphere, build_torus

settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def sphere3():
    return build_sphere(1.0, 3)


@pytest.fixture(scope="session")
def sphere2():
    return build_sphere(1.0, 2)


@pytest.fixture(scope="session")
def torus1():
    return build_torus((1.0, 1.0, 1.0, 1.0), 1)


@pytest.fixture(scope="session")
def s2xs2():
    return build_s2xs2(1.0, 2.0, 2)
