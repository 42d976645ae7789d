import time

import pytest

from lfodamp.scenarios.config import STRATEGIES, default_config
from lfodamp.scenarios.runner import compare_all, find_marginal_tie_scale

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def record_criterion(request):
    """Store a one-line verdict for an acceptance criterion and echo it."""
    table = request.config.stash[_CRITERIA]

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        table[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_CRITERIA, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(table):
        terminalreporter.write_line(table[n])


@pytest.fixture(scope="session")
def marginal():
    """``(tie_scale, curve, wall_seconds)`` of the default no-PSS search."""
    t0 = time.perf_counter()
    scale, curve = find_marginal_tie_scale(default_config("no_pss"))
    return scale, curve, time.perf_counter() - t0


@pytest.fixture(scope="session")
def comparison(marginal):
    """All seven strategies at the marginal tie scale, with wall time."""
    t0 = time.perf_counter()
    cmp = compare_all(STRATEGIES, tie_scale=marginal[0])
    return cmp, time.perf_counter() - t0
