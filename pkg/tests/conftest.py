import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import RESULTS  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        status, name, secs, note = RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d} {status}  {name}  ({secs:.2f} s){'  ' + note if note else ''}")
