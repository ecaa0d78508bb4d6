import time

import pytest

ACCEPTANCE_LINES = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    if call.when == "call":
        item.call_failed = outcome.get_result().failed


@pytest.fixture
def criterion(request):
    """Prints one PASS/FAIL line for the acceptance criterion named by the test's marker."""
    mark = request.node.get_closest_marker("acceptance")
    number, title = mark.args if mark else ("?", request.node.name)
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    status = "FAIL" if getattr(request.node, "call_failed", True) else "PASS"
    line = f"{status} criterion {number:>2}: {title} ({elapsed:.1f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
