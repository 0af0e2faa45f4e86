import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record a one-line pass/fail verdict for an acceptance criterion."""

    def record(label: str, passed: bool, detail: str = "", soft: bool = False):
        verdict = "PASS" if passed else ("SOFT-MISS" if soft else "FAIL")
        line = f"{label:<44} {verdict:<9} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
