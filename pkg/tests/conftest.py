from __future__ import annotations

import pytest

ACCEPTANCE_COUNT = 10
_results: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, passed, detail)."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _results[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_results[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in range(1, ACCEPTANCE_COUNT + 1):
        line = _results.get(number, f"criterion {number:2d}: FAIL  (no result recorded)")
        terminalreporter.write_line(line)
