import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the PASS/FAIL line of one acceptance criterion."""

    def report(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _LINES[number] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_LINES):
            terminalreporter.write_line(_LINES[number])
