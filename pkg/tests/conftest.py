import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(capsys):
    """Record and print the outcome line of one acceptance criterion."""

    def record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} [{name}]: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_LINES):
            terminalreporter.write_line(_LINES[number])
