"""Shared pytest plumbing for the acceptance checklist.

Acceptance tests record one CRITERION line each via record_criterion; the
terminal-summary hook echoes the collected lines after the run so the
checklist is visible even when per-test stdout is captured.
"""

ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    line = f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
