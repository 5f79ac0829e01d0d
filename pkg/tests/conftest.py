import math
from pathlib import Path

import numpy as np
import pytest

from waynav.world import Bounds, FloorPlan

FIXTURES = Path(__file__).parent / "fixtures"


def box_walls(x0, z0, x1, z1):
    return [(x0, z0, x1, z0), (x1, z0, x1, z1), (x1, z1, x0, z1), (x0, z1, x0, z0)]


def square_room(half=2.0):
    """Closed square room centred on the origin."""
    return FloorPlan(np.array(box_walls(-half, -half, half, half)), [], Bounds(-half, -half, half, half))


def square_range(angle_deg, half=2.0):
    """Closed-form range from the centre of the square room to its wall."""
    a = math.radians(angle_deg)
    return half / max(abs(math.sin(a)), abs(math.cos(a)))


@pytest.fixture
def fixture_scene_path():
    return FIXTURES / "fixture_scene.json"


@pytest.fixture
def room():
    return square_room()


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number, ok, detail):
        ACCEPTANCE_LINES[number] = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
