import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report():
    """Collect one summary line per acceptance criterion; printed at the end of the run."""

    def add(line: str):
        print(line)
        _ACCEPTANCE_LINES.append(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
