import pytest

CRITERIA = []


@pytest.fixture
def report():
    """Record one pass/fail line; the lines are repeated in the terminal summary."""
    def emit(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        CRITERIA.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
