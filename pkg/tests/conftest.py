import pytest

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, label): acceptance criterion number and summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, label = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _RESULTS[n] = ("PASS" if rep.passed else "FAIL", label)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        verdict, label = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {label}")
