import re
from collections import OrderedDict

_CRITERIA = OrderedDict()
_PATTERN = re.compile(r"test_acceptance\.py::test_ac(\d+)_")


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if not m:
        return
    key = int(m.group(1))
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        _CRITERIA[key] = _CRITERIA.get(key, True) and not failed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        terminalreporter.write_line(f"AC{key}: {'PASS' if _CRITERIA[key] else 'FAIL'}")
