import numpy as np
import pytest

from thickfield.core import GridSpec
from thickfield.errors import DimMismatch, SliceOutOfRange
from thickfield.occupancy import OrientedBox3D, box_labels
from thickfield.viz import (
    decode_pgm,
    encode_pgm,
    ray_profile_figure,
    render_slice,
    slice_figure,
    take_slice,
)


def test_uniform_volume_is_flat():
    img = render_slice(np.full((4, 5, 6), 3.25), "z", 2)
    assert img.shape == (5, 4) and np.all(img == img[0, 0])


def test_continuous_volume_spans_full_range(rng):
    img = render_slice(rng.uniform(-2, 7, (6, 6, 6, 3)), "y", 1)
    assert img.min() == 0 and img.max() == 255


def test_tri_state_levels():
    vol = np.zeros((3, 2, 1))
    vol[0], vol[2] = -1, 1
    img = render_slice(vol, "z", 0)
    # first slice axis runs left to right
    np.testing.assert_array_equal(img, [[0, 128, 255], [0, 128, 255]])


def test_orientation():
    vol = np.zeros((3, 4, 1))
    vol[2, 3, 0] = 1.0  # largest x, largest y
    img = render_slice(vol, "z", 0)
    assert img.shape == (4, 3)
    assert img[0, 2] == 255 and (img == 255).sum() == 1


def test_box_slice_is_white_rectangle():
    spec = GridSpec((0, 8), (0, 8), (0, 4), 1.0)
    box = OrientedBox3D((4.0, 3.0, 2.0), (2.0, 2.0, 4.0), 0.0)  # l along x, w along y
    img = render_slice(box_labels([box], 1.0, spec).values, "z", 1)
    white = np.argwhere(img == 255)
    assert len(white) == 8
    rows, cols = white[:, 0], white[:, 1]
    assert set(cols) == {2, 3, 4, 5}
    assert set(rows) == {8 - 1 - 2, 8 - 1 - 3}
    assert np.all((img == 255) | (img == 0))


def test_slice_errors():
    vol = np.zeros((2, 3, 4))
    with pytest.raises(SliceOutOfRange):
        take_slice(vol, "z", 4)
    with pytest.raises(SliceOutOfRange):
        take_slice(vol, "x", -1)
    with pytest.raises(DimMismatch):
        take_slice(np.zeros((2, 3)), "x", 0)
    with pytest.raises(ValueError):
        take_slice(vol, "w", 0)


def test_pgm_round_trip(rng):
    img = rng.integers(0, 256, (7, 11), dtype=np.uint8)
    data = encode_pgm(img)
    assert data.startswith(b"P5\n11 7\n255\n") and len(data) == 12 + 77
    np.testing.assert_array_equal(decode_pgm(data), img)


def test_figures_written(tmp_path, rng):
    slice_figure(rng.uniform(0, 1, (5, 6, 7)), "x", 2, tmp_path / "slice.png")
    edges = np.linspace(2, 10, 9)
    mask = np.ones(8)
    mask[2:5] = 0
    ray_profile_figure(rng.uniform(0, 1, 8), np.eye(8)[3], mask, edges, tmp_path / "ray.png", title="ray")
    for name in ("slice.png", "ray.png"):
        assert (tmp_path / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
