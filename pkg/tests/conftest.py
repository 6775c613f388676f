"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_RESULTS: dict[str, list] = {}


def criterion(name: str):
    """Tag a test as the check for one acceptance criterion."""

    def mark(fn):
        fn.criterion = name
        return fn

    return mark


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    name = getattr(getattr(item, "function", None), "criterion", None)
    if name is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry = _RESULTS.setdefault(name, [True, 0.0])
        entry[0] = entry[0] and report.passed
        entry[1] += report.duration


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, seconds) in _RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({seconds:.1f} s)")
