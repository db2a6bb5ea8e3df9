"""Shared pytest plumbing: the acceptance-criteria summary section."""

# test_acceptance.py appends one line per criterion; printed after the run
# so the verdicts are visible even when every test passes.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.line(line)
