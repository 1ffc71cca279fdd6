import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.fixture
def criterion(request):
    """Attach a one-line result detail to the current criterion."""
    def record(detail: str):
        _criteria[request.node.nodeid][1] = detail
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = _criteria.setdefault(item.nodeid, [marker.args[0], "", None])
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry[2] = None if rep.skipped else rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, detail, ok in sorted(_criteria.values(), key=lambda e: e[0]):
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        tr.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))
