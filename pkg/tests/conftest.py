import numpy as np
import pytest

from panelval.data import BINARY, AnnotationTable
from panelval.metrics import ContingencyTable

W, O = "Wellness", "Other"

# Validator 1, 2, 3 votes -> (visit count, published reference label)
SUPP_TABLE_1 = [
    ((O, O, O), 457, O),
    ((O, O, W), 10, O),
    ((O, W, O), 1, O),
    ((O, W, W), 6, W),
    ((W, O, O), 5, O),
    ((W, O, W), 5, W),
    ((W, W, O), 6, W),
    ((W, W, W), 146, W),
]

TABLE_2 = ContingencyTable(tp=125, fp=31, fn=20, tn=446)

TABLE_3 = {
    "sensitivity": (0.86, 0.80, 0.92),
    "specificity": (0.94, 0.91, 0.96),
    "ppv": (0.80, 0.74, 0.86),
    "npv": (0.96, 0.94, 0.97),
    "f1": (0.83, 0.78, 0.87),
    "balanced_accuracy": (0.90, 0.87, 0.93),
    "mcc": (0.78, 0.72, 0.83),
    "jaccard": (0.71, 0.64, 0.78),
}


def panel_from_patterns(rows, raters=("V1", "V2", "V3")) -> AnnotationTable:
    codes = []
    for votes, count, *_ in rows:
        codes.extend([[BINARY.code(v) for v in votes]] * count)
    n = len(codes)
    return AnnotationTable([f"v{i:04d}" for i in range(n)], raters, np.array(codes), BINARY)


@pytest.fixture
def supp_panel():
    return panel_from_patterns(SUPP_TABLE_1)


@pytest.fixture
def table2():
    return TABLE_2


# -- acceptance summary: one pass/fail line per criterion -------------------------

_criteria = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        key = marker
        prev = _criteria.get(key, "passed")
        _criteria[key] = "failed" if report.outcome == "failed" or prev == "failed" else prev


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep._criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), outcome in sorted(_criteria.items()):
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{tag}] criterion {num}: {title}")
