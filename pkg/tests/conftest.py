"""Collect acceptance outcomes and print one line per criterion."""

from collections import defaultdict

_outcomes = defaultdict(list)
_labels = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _labels[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    label = _labels.get(report.nodeid)
    if label is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[label].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_outcomes, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
        ok = all(o == "passed" for o in _outcomes[label])
        terminalreporter.write_line(f"criterion {label}: {'PASS' if ok else 'FAIL'}")
