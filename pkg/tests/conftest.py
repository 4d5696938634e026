import json
import pathlib

import pytest

ORACLES = json.loads((pathlib.Path(__file__).parent / "oracles" / "values.json").read_text())


@pytest.fixture(scope="session")
def oracle():
    return ORACLES


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
