import pytest

_LINES = []


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion; returns the verdict."""

    def record(key, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
