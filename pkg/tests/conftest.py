import pytest

_results = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and (rep.failed or rep.skipped)):
        number, title = mark.args
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _results.append((number, title, status, item.name))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    by_number = {}
    for number, title, status, name in _results:
        by_number.setdefault(number, (title, []))[1].append((status, name))
    for number in sorted(by_number):
        title, runs = by_number[number]
        states = {s for s, _ in runs}
        status = "FAIL" if "FAIL" in states else ("SKIP" if states == {"SKIP"} else "PASS")
        terminalreporter.write_line(f"criterion {number:>2} {status}: {title} ({len(runs)} checks)")
        for s, name in runs:
            if s != "PASS":
                terminalreporter.write_line(f"    {s} {name}")
