"""Shared pytest wiring: replay the acceptance scorecard after the run.

The acceptance tests record one PASS/FAIL line per criterion; printing them
through the terminal reporter keeps them visible in the run log even though
pytest captures ordinary test output.
"""

import sys


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "SCORECARD", None) if module else None
    if lines:
        terminalreporter.section("acceptance scorecard")
        for line in lines:
            terminalreporter.write_line(line)
