import pytest

ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def _line(number: int, title: str, passed: bool, detail: str) -> str:
    return f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}" + (f"  ({detail})" if detail else "")


@pytest.fixture
def record():
    """Log one acceptance criterion; the summary is printed at the end of the run."""

    def _record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE.append((number, title, bool(passed), detail))
        print(_line(number, title, passed, detail))
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for entry in sorted(ACCEPTANCE):
        terminalreporter.write_line(_line(*entry))
