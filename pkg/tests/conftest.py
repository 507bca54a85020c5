"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary."""

import pytest

_RESULTS: dict[int, dict] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            number, title = marker.args
            _RESULTS.setdefault(number, {"title": title, "outcomes": [], "notes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = _RESULTS[marker.args[0]]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry["outcomes"].append(report.passed)
        entry["notes"].extend(f"{k}={v}" for k, v in item.user_properties)


@pytest.fixture
def record(request):
    """Attach a measured quantity to the criterion line of the current test."""

    def _record(name, value):
        text = f"{value:.3g}" if isinstance(value, float) else str(value)
        request.node.user_properties.append((name, text))

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        outcomes = entry["outcomes"]
        status = "PASS" if outcomes and all(outcomes) else ("NOT RUN" if not outcomes else "FAIL")
        notes = "; ".join(entry["notes"])
        terminalreporter.write_line(f"criterion {number:2d} {status:4s}  {entry['title']}" + (f"  [{notes}]" if notes else ""))
