import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hullopt.pipeline import default_design

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def design():
    """Bundled hull, prow lattice and O-grid volume mesh."""
    return default_design(with_volume=True)


@pytest.fixture(scope="session")
def surface_design():
    return default_design(with_volume=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the test then asserts the same outcome."""

    def record(number, title, ok, detail):
        line = f"CRITERION {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
