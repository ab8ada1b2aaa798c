import pytest

_LINES = {}


@pytest.fixture
def record_criterion():
    """Store a criterion row so its one-line verdict is printed after the run."""
    def record(row):
        _LINES[row.number] = row.line()
        return row
    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_LINES):
        terminalreporter.write_line(_LINES[k])
