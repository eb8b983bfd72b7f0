import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(criterion, passed, detail)``.

    ``passed=None`` marks an informational, ungated line.
    """
    def record(criterion, passed, detail=""):
        label = "INFO" if passed is None else "PASS" if passed else "FAIL"
        line = f"{label}  [{criterion}] {detail}"
        _VERDICTS.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
