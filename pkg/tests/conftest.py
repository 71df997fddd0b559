import contextlib
import time

import pytest

_VERDICTS = []


class _Verdict:
    def __init__(self, number, title):
        self.number, self.title = number, title
        self.ok = False
        self.detail = ""


@pytest.fixture
def criterion():
    """Context manager that records one PASS/FAIL line per acceptance criterion."""

    @contextlib.contextmanager
    def run(number, title):
        v = _Verdict(number, title)
        t0 = time.perf_counter()
        try:
            yield v
        except Exception as exc:
            v.ok = False
            v.detail = f"{type(exc).__name__}: {exc}"
            raise
        finally:
            line = f"criterion {number} [{title}]: {'PASS' if v.ok else 'FAIL'} ({v.detail}; {time.perf_counter() - t0:.1f} s)"
            _VERDICTS.append(line)
            print(line)

    return run


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
