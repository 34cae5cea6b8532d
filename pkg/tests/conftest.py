import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, text): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    cid, text = marker.args
    entry = _criteria.setdefault(cid, {"text": text, "failed": []})
    if report.failed:
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria, key=lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)):
        e = _criteria[cid]
        status = "FAIL" if e["failed"] else "PASS"
        detail = f" (failing: {', '.join(e['failed'])})" if e["failed"] else ""
        terminalreporter.write_line(f"[{status}] criterion {cid}: {e['text']}{detail}")
