"""Shared pytest wiring: an end-of-run acceptance report.

The acceptance module records one entry per criterion; this hook prints them
as a summary section so the pass/fail lines are visible in any run, not just
under ``-s``.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = []
    for name, module in sys.modules.items():
        if name.rpartition(".")[2] == "test_acceptance":
            results = getattr(module, "RESULTS", [])
            break
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, status in results:
        terminalreporter.write_line(f"criterion {num:2d} [{title}]: {status}")
