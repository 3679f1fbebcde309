import os

import numpy as np
import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("PUFEXPERTS_VERYSLOW"):
        return
    skip = pytest.mark.skip(reason="multi-hour run; set PUFEXPERTS_VERYSLOW=1 to include")
    for item in items:
        if "veryslow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



_VERDICTS = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; errors before recording count as FAIL."""
    name = request.node.name

    def record(criterion, passed, detail):
        _VERDICTS[name] = (criterion, "PASS" if passed else "FAIL", detail)
        print(f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    yield record
    if name not in _VERDICTS:
        _VERDICTS[name] = (name, "FAIL", "raised before a verdict was recorded")


def pytest_runtest_logreport(report):
    if report.when == "setup" and report.skipped and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        label = name[len("test_"):].split("_")[0].upper()
        _VERDICTS.setdefault(name, (label, "SKIP", str(report.longrepr[-1])))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in sorted(_VERDICTS.values(), key=lambda v: str(v[0])):
        terminalreporter.write_line(f"{status:4}  {criterion}: {detail}")
