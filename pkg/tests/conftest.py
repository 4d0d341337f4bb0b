import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT.lines():
            terminalreporter.write_line(line)
