import sys
from pathlib import Path

import pytest

from ctmcbounds.lang import parse_file

DATA = Path(__file__).resolve().parents[1] / "src" / "ctmcbounds" / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def twostate():
    return parse_file(DATA / "twostate.ctmc")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
