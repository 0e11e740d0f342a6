"""Shared pytest hooks for the test suite.

The acceptance module appends one "criterion N: PASS/FAIL" line per check to
CRITERION_LINES; echoing them from the terminal-summary hook keeps them
visible in plain ``pytest -v`` output, where capture would otherwise swallow
stdout of passing tests.
"""

CRITERION_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERION_LINES:
        terminalreporter.write_line(line)
