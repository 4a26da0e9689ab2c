"""Collects the acceptance-criterion verdicts and prints them after the run."""

ACCEPTANCE_LINES: dict[int, str] = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title}"
    if detail:
        line += f" -- {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
