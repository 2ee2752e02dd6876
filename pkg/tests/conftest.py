import numpy as np
import pytest

from rsma_snc.scenario import Scenario, derive_link_budget, streams_for

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def default_scenario():
    return Scenario()


@pytest.fixture(scope="session")
def budgets(default_scenario):
    return derive_link_budget(default_scenario)


@pytest.fixture(scope="session")
def full_power(default_scenario):
    return {q: default_scenario.p_max_w for q in streams_for(default_scenario.scheme)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(line)
