from pathlib import Path

import numpy as np
import pytest

import acceptance_log
from scenes import cube_grid_spec
from thickfield.kitti import parse_calib

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def kitti_calib():
    return parse_calib((FIXTURES / "000000.calib").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cube_grid():
    """20 x 20 x 20 cells of 0.5 m in front of :func:`forward_camera`."""
    return cube_grid_spec()


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_log.format_lines():
        terminalreporter.write_line(line)
