"""Collect acceptance verdict lines and repeat them in the terminal summary."""

import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    def record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _LINES.append(line)
        return ok

    return record


@pytest.fixture(scope="session")
def report_block():
    def emit(title: str, lines):
        print(title)
        _LINES.append(title)
        for line in lines:
            print("  " + line)
            _LINES.append("  " + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance")
        for line in _LINES:
            terminalreporter.write_line(line)
