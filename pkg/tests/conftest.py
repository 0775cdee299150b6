import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """``verdict(n, name, ok, detail)`` records one PASS/FAIL line and asserts ``ok``."""
    def record(n, name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {n}: {name} ({detail})"
        _VERDICTS.append((n, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS, key=lambda v: v[0]):
            terminalreporter.write_line(line)
