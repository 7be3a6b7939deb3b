import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, detail); filled by acceptance tests via the fixture
_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.fixture
def criterion(request):
    """Record a measured detail line for the acceptance summary."""
    marker = request.node.get_closest_marker("criterion")
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "detail": "", "outcome": "not run"})

    def note(text: str) -> None:
        entry["detail"] = text

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "detail": "", "outcome": "not run"})
    if rep.when == "call":
        entry["outcome"] = "PASS" if rep.passed else "FAIL"
    elif rep.failed:
        entry["outcome"] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"[{e['outcome']}] {n:2d}. {e['title']}"
        if e["detail"]:
            line += f" | {e['detail']}"
        tr.write_line(line)
