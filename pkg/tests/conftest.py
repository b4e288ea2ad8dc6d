"""Shared fixtures and the per-criterion summary printed after the acceptance run."""

from collections import defaultdict

import pytest

from covkit.core.rng import make_rng

_criteria: dict[int, list[str]] = defaultdict(list)
_names = {
    1: "donut exactness (NF, split, stochastic)",
    2: "donut injective on-manifold density",
    3: "Gaussian four-way at the origin",
    4: "equivalence suites",
    5: "Jacobian engine",
    6: "stochastic estimators",
    7: "continuous CoV and diffusion",
    8: "normalization of 2-D densities",
    9: "diagnostics sensitivity",
    10: "donut trade-off ordering",
}


@pytest.fixture
def rng():
    return make_rng(20240601)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for key in report.keywords:
        if key.startswith("criterion_"):
            _criteria[int(key.split("_")[1])].append(report.outcome)


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.keywords[f"criterion_{m.args[0]}"] = True


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_names):
        outcomes = _criteria.get(n)
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} [{status}] {_names[n]} ({len(outcomes or [])} tests)")
