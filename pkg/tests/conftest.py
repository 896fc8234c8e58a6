"""Shared pytest wiring.

The acceptance module records one verdict per gate while it runs; the
terminal-summary hook below prints those verdicts as a block at the end
of the session so a plain ``pytest`` run always shows one PASS/FAIL
line per gate, whether or not output capturing is on.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance") or sys.modules.get(
        "tests.test_acceptance"
    )
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance gates")
    for num, label, ok, detail in sorted(verdicts):
        tail = f"  ({detail})" if detail else ""
        terminalreporter.write_line(
            f"ACCEPTANCE {num:02d} {label}: {'PASS' if ok else 'FAIL'}{tail}"
        )
