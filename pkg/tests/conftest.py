import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from slowfast_lq.problem import canonical_case  # noqa: E402
from slowfast_lq.reduced_solver import solve_reduced_dre  # noqa: E402


@pytest.fixture(scope="session")
def s1():
    return canonical_case("S1")


@pytest.fixture(scope="session")
def s2():
    return canonical_case("S2")


@pytest.fixture(scope="session")
def reduced_s1(s1):
    return solve_reduced_dre(s1)


@pytest.fixture(scope="session")
def reduced_s2(s2):
    return solve_reduced_dre(s2)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
