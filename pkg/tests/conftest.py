import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import helpers  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not helpers.CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(helpers.CRITERIA):
        ok, detail = helpers.CRITERIA[k]
        terminalreporter.write_line("criterion %2d: %s  %s" % (k, "PASS" if ok else "FAIL", detail))
