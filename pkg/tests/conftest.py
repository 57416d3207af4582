import time

import pytest

from mfg_dtue import heuristic_solve
from mfg_dtue.scenarios import benchmark_scenario

# (criterion number, title, passed, detail) collected by the acceptance tests
ACCEPTANCE_RESULTS = []


def record(number, title, passed, detail=""):
    """Print and remember one PASS/FAIL line for an acceptance criterion."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title}"
    if detail:
        line += f" ({detail})"
    print(line)
    ACCEPTANCE_RESULTS.append((number, line))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(line)


class SolvedBenchmark:
    def __init__(self):
        self.scenario = benchmark_scenario()
        sc = self.scenario
        start = time.perf_counter()
        self.mu, self.report = heuristic_solve(sc.demand, sc.speed, sc.prefs, sc.grid, sc.solver)
        self.seconds = time.perf_counter() - start


@pytest.fixture(scope="session")
def solved_benchmark():
    """The benchmark solved once with the heuristic and shared across tests."""
    return SolvedBenchmark()
