"""Small synthetic camera/grid setups shared by several test modules."""

import numpy as np

from thickfield.core import CameraCalibration, GridSpec


def forward_camera(image_size=32, focal=16.0):
    """Pinhole camera at the world origin looking down +x (x fwd, y left, z up)."""
    c = image_size / 2.0
    p2 = np.array([[focal, 0.0, c, 0.0], [0.0, focal, c, 0.0], [0.0, 0.0, 1.0, 0.0]])
    tr = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
    return CameraCalibration(p2, np.eye(3), tr)


def cube_grid_spec():
    return GridSpec((2.0, 12.0), (-5.0, 5.0), (-5.0, 5.0), 0.5)
