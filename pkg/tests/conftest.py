from __future__ import annotations

import sys
from pathlib import Path

import pytest

from helpers import copy_fixture


@pytest.fixture
def flights_config(tmp_path: Path) -> Path:
    return copy_fixture("flights", tmp_path / "flights")


@pytest.fixture
def gap_config(tmp_path: Path) -> Path:
    return copy_fixture("gap", tmp_path / "gap")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.VERDICTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
