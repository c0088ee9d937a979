import pytest

_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one verdict line per criterion; the lines are echoed in the terminal summary."""

    def record(number: int, title: str, passed: bool | None, detail: str) -> None:
        verdict = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        line = f"[{verdict}] criterion {number}: {title} ({detail})"
        _LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
