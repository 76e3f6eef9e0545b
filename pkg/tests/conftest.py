"""Shared fixtures and the acceptance-criteria summary hook.

The acceptance tests append one verdict line each to ACCEPTANCE_LINES;
printing them from the terminal-summary hook keeps the lines visible
under plain ``pytest -v`` where per-test stdout is captured.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
