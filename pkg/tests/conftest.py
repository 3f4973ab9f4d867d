import pytest

# Filled by tests/test_acceptance.py, one line per criterion, printed at the end of the run.
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES.values():
        terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(key: str, passed: bool, detail: str) -> None:
        line = f"{key}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[key] = line
        print(line)

    return record
