import numpy as np
import pytest

from fineassembly.model import reference_model
from fineassembly.task import reference_scenario

# criterion number -> [title, passed, details]
_CRITERIA = {}


@pytest.fixture(scope="session")
def model():
    return reference_model()


@pytest.fixture(scope="session")
def scenario():
    return reference_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report(request):
    """Attach a measured value to the acceptance line of the running test."""
    marker = request.node.get_closest_marker("criterion")

    def add(text: str):
        if marker is not None:
            _CRITERIA.setdefault(marker.args[0], [marker.args[1], True, []])[2].append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    entry = _CRITERIA.setdefault(marker.args[0], [marker.args[1], True, []])
    if rep.failed or rep.skipped:
        entry[1] = False
        if rep.failed:
            entry[2].append(f"{item.name} failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, ok, details = _CRITERIA[num]
        line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
