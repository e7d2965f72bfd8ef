import os

import pytest

os.environ.setdefault("LDLAB_THREADS", "1")

CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = CRITERIA.get(key, ("PASS", ""))
        ok = rep.outcome == "passed"
        crash = getattr(rep.longrepr, "reprcrash", None)
        detail = "" if ok else (crash.message if crash else str(rep.longrepr)).splitlines()[0][:160]
        CRITERIA[key] = prev if ok and prev[0] == "FAIL" else (("PASS", mark.args[1]) if ok else ("FAIL", detail))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key, label): acceptance criterion a test belongs to")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (len(k.split(".")[0]), k)):
        status, detail = CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}")
