import re
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"

CRITERIA = {
    1: "appendix F1 replay within 0.003",
    2: "area roll-up 732,345 ha and -1.4% vs official",
    3: "area-table diff_percent within 0.05 points",
    4: "index formula oracle on 10,000 band tuples",
    5: "Savitzky-Golay polynomial reproduction and coefficients",
    6: "IQR filter properties",
    7: "synthetic district recall >= 0.95, FPR <= 0.02",
    8: "accuracy monotone in field size",
    9: "determinism across threads and runs",
    10: "kappa oracle on 1,000 matrices",
}

_outcomes: dict[int, list[str]] = {}


@pytest.fixture
def data_dir():
    return DATA


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)_", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        _outcomes.setdefault(n, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _outcomes:
            continue
        ok = all(o == "passed" for o in _outcomes[n])
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {CRITERIA[n]}")
