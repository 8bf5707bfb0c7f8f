import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Records one PASS/FAIL line per acceptance criterion and asserts it."""

    def _report(number: int, name: str, ok: bool, detail: str):
        line = (f"ACCEPTANCE {number} ({name}): "
                f"{'PASS' if ok else 'FAIL'} - {detail}")
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance report")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
