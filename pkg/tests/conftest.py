import time
from contextlib import contextmanager

import pytest

_RESULTS = pytest.StashKey[list]()


class _Criterion:
    def __init__(self):
        self.notes = []

    def note(self, text):
        self.notes.append(text)


@pytest.fixture
def criterion(request):
    """Context manager that records one PASS/FAIL line for an acceptance criterion."""
    results = request.config.stash.setdefault(_RESULTS, [])

    @contextmanager
    def run(number, title):
        rec = _Criterion()
        t0 = time.perf_counter()
        status = "FAIL"
        try:
            yield rec
            status = "PASS"
        finally:
            rec.note(f"{time.perf_counter() - t0:.1f} s")
            line = f"{status} criterion {number}: {title} ({'; '.join(rec.notes)})"
            results.append((number, line))
            print(line)
    return run


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, [])
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(results):
            terminalreporter.write_line(line)
