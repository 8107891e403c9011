import pytest

RESULTS = {}


@pytest.fixture
def criterion(request):
    """Record a named acceptance criterion; the outcome is the test's outcome."""
    def record(name):
        RESULTS[request.node.nodeid] = name
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.nodeid in RESULTS:
        RESULTS[item.nodeid] = (RESULTS[item.nodeid], rep.passed)


def pytest_terminal_summary(terminalreporter):
    rows = [v for v in RESULTS.values() if isinstance(v, tuple)]
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in sorted(rows, key=lambda r: int(r[0].split()[0][1:])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
