import pytest

_LINES: list[tuple[int, str]] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance check, printed after the run."""
    def record(number: int, label: str, ok: bool, detail: str = "") -> bool:
        status = "PASS" if ok else "FAIL"
        _LINES.append((number, f"[{number:>2}] {status}  {label}" + (f"  ({detail})" if detail else "")))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(line)
