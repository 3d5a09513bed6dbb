import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from tireid.dynamics import AxlePacejka, TireParams, VehicleParams  # noqa: E402


@pytest.fixture
def vehicle():
    return VehicleParams()


@pytest.fixture
def true_tires():
    return TireParams(AxlePacejka(10.0, 1.9, 0.8, 0.97), AxlePacejka(12.0, 1.7, 0.8, 0.95))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
