"""Shared test plumbing: the acceptance-criteria summary lines.

Acceptance tests append one "[criterion NN] PASS/FAIL — ..." line each;
the hook prints them in the terminal summary so the verdicts are
visible regardless of pytest's output capturing.
"""

import pytest

ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
