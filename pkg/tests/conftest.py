import numpy as np
import pytest

_ACCEPTANCE_LINES = []


def report(number: int, name: str, ok: bool, detail: str = "") -> None:
    """Record an acceptance-criterion outcome and assert it."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {name}: {detail}"
    print(line)
    _ACCEPTANCE_LINES.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
