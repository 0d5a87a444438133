import pytest

_VERDICTS = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict line and fail the test when it is red."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} - {detail}"
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line

    def skip(number, reason):
        line = f"criterion {number:>2}: SKIP - {reason}"
        _VERDICTS.append((number, line))
        print(line)
        pytest.skip(reason)

    record.skip = skip
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
