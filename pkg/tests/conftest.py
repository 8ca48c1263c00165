import os
import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_collection_modifyitems(config, items):
    live = bool(os.environ.get("LLM_BASE_URL")) and bool(os.environ.get("LLM_API_KEY"))
    skip = pytest.mark.skip(reason="needs LLM_BASE_URL and LLM_API_KEY")
    for item in items:
        if "live" in item.keywords and not live:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, keyed by the number in the test name
_CRITERION = re.compile(r"test_criterion_(\d+)")
_criteria: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m is None or (report.when != "call" and report.passed):
        return
    n = int(m.group(1))
    outcome = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
    if _criteria.get(n) != "FAIL":
        _criteria[n] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        terminalreporter.write_line(f"criterion {n:2d}: {_criteria[n]}")
