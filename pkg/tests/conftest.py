import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")
_acceptance: dict = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or (report.when != "call" and not report.failed):
        return
    detail = dict(report.user_properties).get("detail", "")
    _acceptance[int(m.group(1))] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_acceptance):
        verdict, detail = _acceptance[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
