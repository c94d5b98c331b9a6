import pytest

from fdlm import checks

_ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def recovery():
    """The full-length simulated fit (T = 300, d = 24, 10,000 iterations), shared across modules."""
    return checks.recovery_run()


@pytest.fixture
def acceptance_line(request):
    """Record one PASS/FAIL line for an acceptance criterion; printed at the end of the session."""

    def record(number, result):
        line = f"criterion {number}: {result.line()}"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        return result

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[number])
