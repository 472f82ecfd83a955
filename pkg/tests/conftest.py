import time

import pytest

_RESULTS = []


class Criterion:
    """Records one acceptance line: name, verdict, measured values."""

    def __init__(self, name):
        self.name = name
        self.notes = []
        self.passed = False
        self.started = time.perf_counter()
        self.duration = None

    def note(self, text):
        self.notes.append(str(text))

    def check(self, ok, text):
        self.note(text)
        assert ok, text

    @property
    def elapsed(self):
        return time.perf_counter() - self.started


@pytest.fixture
def criterion(request):
    c = Criterion(request.node.get_closest_marker("criterion").args[0])
    yield c
    report = getattr(request.node, "rep_call", None)
    c.passed = report is not None and report.passed
    c.duration = c.elapsed
    _RESULTS.append(c)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for c in _RESULTS:
        verdict = "PASS" if c.passed else "FAIL"
        detail = "; ".join(c.notes)
        terminalreporter.write_line(f"{verdict}  {c.name}  [{c.duration:.1f}s]  {detail}")
