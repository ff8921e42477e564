import pytest

# (number, title) -> (outcome, detail), filled by tests marked with ``criterion``
CRITERIA: dict[tuple[int, str], tuple[str, str]] = {}
DETAILS: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion check")


@pytest.fixture
def detail(request):
    """Record a one-line measurement shown next to the criterion verdict."""
    def record(text: str) -> None:
        DETAILS[request.node.nodeid] = text
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    verdict = "PASS" if report.passed else "FAIL"
    CRITERIA[tuple(marker.args)] = (verdict, DETAILS.get(item.nodeid, ""))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), (verdict, text) in sorted(CRITERIA.items()):
        line = f"criterion {n} {verdict}: {title}"
        terminalreporter.write_line(line + (f" ({text})" if text else ""))
