import struct
import subprocess
import sys

import numpy as np
import pytest

from oracles import inside_by_half_spaces, sample_voxel_oracle
from scenes import forward_camera
from thickfield.blob import blob_read, blob_write
from thickfield.cli import main
from thickfield.config import PipelineConfig
from thickfield.core import DepthMap, GridSpec
from thickfield.depth import encode_one_hot, extension_mask, soft_extended_target
from thickfield.frustum import frustum_coordinates, lift_features, voxel_centers
from thickfield.kitti import format_calib, label_to_world_box, parse_calib, parse_labels
from thickfield.viz import decode_pgm

SCENE = [
    "x_min=2", "x_max=12", "y_min=-5", "y_max=5", "z_min=-5", "z_max=5", "voxel_size=0.5",
    "d_min=2", "d_max=14", "num_bins=12", "feature_stride=4",
]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    report = dict(line.split("\t", 1) for line in out.splitlines())
    return code, report, err


def sets(pairs):
    return [x for p in pairs for x in ("--set", p)]


@pytest.fixture
def scene(tmp_path, rng):
    """Forward camera, 8x8 feature plane at stride 4, a 20^3 grid in front of it."""
    (tmp_path / "cam.calib").write_text(format_calib(forward_camera()))
    depth = np.full((32, 32), 9.0)
    depth[:16] = 5.5
    depth[3, 3] = 0.0
    blob_write(depth, tmp_path / "depth.blob")
    blob_write(rng.normal(size=(8, 8, 3)), tmp_path / "feat.blob")
    cfg_path = tmp_path / "scene.cfg"
    cfg_path.write_text("\n".join(SCENE) + "\n")
    return tmp_path


# --- encode --------------------------------------------------------------------

def test_encode_onehot(tmp_path, capsys):
    blob_write(np.array([[3.0, 5.0], [7.5, 0.0]]), tmp_path / "d.blob")
    code, rep, _ = run(
        capsys, "encode", tmp_path / "d.blob", "-o", tmp_path / "oh.blob",
        *sets(["num_bins=4", "d_min=2", "d_max=10", "feature_stride=1"]),
    )
    assert code == 0 and rep["dims"] == "2x2x4" and rep["valid_pixels"] == "3"
    oh = blob_read(tmp_path / "oh.blob")
    assert oh.shape == (2, 2, 4)
    np.testing.assert_array_equal(oh.sum(axis=2), [[1, 1], [1, 0]])


def test_encode_target_radius_zero(tmp_path, capsys, fixtures_dir):
    base = ["d_min=2", "d_max=46.8", "num_bins=16", "feature_stride=1"]
    code, rep, _ = run(capsys, "encode", fixtures_dir / "depth_16x8.png", "-o", tmp_path / "oh.blob", *sets(base))
    assert code == 0
    code, rep, _ = run(
        capsys, "encode", fixtures_dir / "depth_16x8.png", "--mode", "target", "-o", tmp_path / "t.blob",
        *sets(base + ["extension_radius=0"]),
    )
    assert code == 0 and rep["mask"] == str(tmp_path / "t_mask.blob")
    np.testing.assert_array_equal(blob_read(tmp_path / "t.blob"), blob_read(tmp_path / "oh.blob"))
    assert np.all(blob_read(tmp_path / "t_mask.blob") == 1)


def test_encode_target_radius_two(tmp_path, capsys, rng):
    depth = rng.uniform(2, 46.8, (12, 10))
    depth[rng.uniform(size=depth.shape) < 0.2] = 0.0
    blob_write(depth, tmp_path / "d.blob")
    code, _, _ = run(
        capsys, "encode", tmp_path / "d.blob", "--mode", "target", "-o", tmp_path / "t.blob",
        "--mask-out", tmp_path / "m.blob", *sets(["extension_radius=2", "feature_stride=1", "num_bins=40"]),
    )
    assert code == 0
    mask = blob_read(tmp_path / "m.blob")
    zeros = (mask == 0).sum(axis=2)
    valid = blob_read(tmp_path / "d.blob") > 0
    assert zeros[valid].max() <= 4 and zeros[valid].min() >= 2
    assert np.all(zeros[~valid] == 0)


def test_encode_target_needs_radius(tmp_path, capsys, fixtures_dir):
    out = tmp_path / "t.blob"
    code, _, err = run(capsys, "encode", fixtures_dir / "depth_16x8.png", "--mode", "target", "-o", out)
    assert code != 0 and "extension_radius" in err
    assert not out.exists()


def test_encode_rejects_8bit_png(tmp_path, capsys, fixtures_dir):
    code, _, err = run(capsys, "encode", fixtures_dir / "depth_8bit.png", "-o", tmp_path / "x.blob")
    assert code != 0 and "WrongBitDepth" in err


# --- occ-labels ------------------------------------------------------------------

SMALL_GRID = ["x_min=10", "x_max=19", "y_min=-1", "y_max=6", "z_min=-3", "z_max=1", "voxel_size=0.25"]


def test_occ_labels_empty(tmp_path, capsys, fixtures_dir):
    (tmp_path / "empty.bin").write_bytes(b"")
    (tmp_path / "empty.label").write_text("")
    code, rep, _ = run(
        capsys, "occ-labels", "--velodyne", tmp_path / "empty.bin", "--labels", tmp_path / "empty.label",
        "--calib", fixtures_dir / "000000.calib", "-o", tmp_path / "occ.blob",
    )
    assert code == 0 and rep["dims"] == "280x376x25" and rep["boxes"] == "0"
    assert np.all(blob_read(tmp_path / "occ.blob") == -1)


def test_occ_labels_one_box(tmp_path, capsys, fixtures_dir):
    (tmp_path / "empty.bin").write_bytes(b"")
    label = (fixtures_dir / "000000.label").read_text().splitlines()[0]
    (tmp_path / "one.label").write_text(label + "\n")
    code, rep, _ = run(
        capsys, "occ-labels", "--velodyne", tmp_path / "empty.bin", "--labels", tmp_path / "one.label",
        "--calib", fixtures_dir / "000000.calib", "-o", tmp_path / "occ.blob", *sets(SMALL_GRID),
    )
    assert code == 0
    box = label_to_world_box(parse_labels(label)[0], parse_calib((fixtures_dir / "000000.calib").read_text()))
    spec = GridSpec((10, 19), (-1, 6), (-3, 1), 0.25)
    dims = tuple(0.8 * d for d in box.dims)
    expected = sum(inside_by_half_spaces(c, box.center, dims, box.yaw) for c in voxel_centers(spec).reshape(-1, 3))
    assert expected > 0 and int(rep["occupied"]) == expected
    assert int(rep["free"]) == 0


def test_occ_labels_boxes_never_reduce_occupied(tmp_path, capsys, fixtures_dir):
    (tmp_path / "empty.label").write_text("")
    common = ["--velodyne", fixtures_dir / "000000.bin", "--calib", fixtures_dir / "000000.calib"]
    _, points_only, _ = run(capsys, "occ-labels", *common, "--labels", tmp_path / "empty.label", "-o", tmp_path / "a.blob")
    code, both, _ = run(
        capsys, "occ-labels", *common, "--labels", fixtures_dir / "000000.label", "-o", tmp_path / "b.blob",
        "--set", "categories=Car,Pedestrian",
    )
    assert code == 0 and both["boxes"] == "3"
    assert int(both["occupied"]) > int(points_only["occupied"]) > 0
    a, b = blob_read(tmp_path / "a.blob"), blob_read(tmp_path / "b.blob")
    assert np.all(b[a == 1] == 1)


def test_occ_labels_bad_calib(tmp_path, capsys, fixtures_dir):
    (tmp_path / "bad.calib").write_text("P2: 1 2 3\n")
    code, _, err = run(
        capsys, "occ-labels", "--velodyne", fixtures_dir / "000000.bin", "--labels", fixtures_dir / "000000.label",
        "--calib", tmp_path / "bad.calib", "-o", tmp_path / "occ.blob",
    )
    assert code != 0 and "calib" in err and "WrongArity" in err
    assert not (tmp_path / "occ.blob").exists()


# --- pipeline --------------------------------------------------------------------

def pipeline(capsys, scene, *extra):
    return run(
        capsys, "pipeline", scene / "depth.blob", scene / "feat.blob", scene / "cam.calib",
        "--config", scene / "scene.cfg", *extra,
    )


def test_pipeline_matches_oracle(scene, capsys):
    code, rep, _ = pipeline(capsys, scene, "--voxels-out", scene / "v.blob", "--bev-out", scene / "b.blob")
    assert code == 0 and rep["voxel_dims"] == "20x20x20x3"
    cfg = PipelineConfig.from_file(scene / "scene.cfg")
    # nearest downsampling picks the pixel at offset stride // 2
    depth = DepthMap(blob_read(scene / "depth.blob").astype(np.float64)[2::4, 2::4])
    weights = encode_one_hot(depth, cfg.bin_spec).values
    frustum = lift_features(weights, blob_read(scene / "feat.blob").astype(np.float64))
    calib = forward_camera()
    spec = cfg.grid_spec
    expected = sample_voxel_oracle(
        frustum, calib.intrinsics, calib.rectification, calib.lidar_to_camera,
        spec.lower, spec.voxel_size, spec.dims, 2.0, 14.0, 12, 4,
    )
    voxels = blob_read(scene / "v.blob")
    assert np.abs(voxels - expected).max() < 1e-6
    assert int(rep["nonzero_voxels"]) > 0
    bev = blob_read(scene / "b.blob")
    assert bev.shape == (20, 20, 60)
    np.testing.assert_array_equal(bev.reshape(20, 20, 20, 3), voxels)


def test_pipeline_mass_inside_frustum(scene, capsys):
    blob_write(np.ones((8, 8, 2)), scene / "feat.blob")
    code, _, _ = pipeline(capsys, scene, "--voxels-out", scene / "v.blob", "--bev-out", scene / "b.blob")
    assert code == 0
    cfg = PipelineConfig.from_file(scene / "scene.cfg")
    _, visible = frustum_coordinates(voxel_centers(cfg.grid_spec), forward_camera(), cfg.bin_spec, (32, 32), 4)
    voxels = blob_read(scene / "v.blob")
    assert np.all(voxels[~visible] == 0)
    assert np.any(voxels[visible] != 0)


def test_pipeline_gate_identity(scene, capsys):
    assert pipeline(capsys, scene, "--voxels-out", scene / "v0.blob", "--bev-out", scene / "b0.blob")[0] == 0
    blob_write(np.ones((20, 20, 20)), scene / "ones.blob")
    code, _, _ = pipeline(
        capsys, scene, "--voxels-out", scene / "v1.blob", "--bev-out", scene / "b1.blob", "--occupancy", scene / "ones.blob"
    )
    assert code == 0
    assert (scene / "b1.blob").read_bytes() == (scene / "b0.blob").read_bytes()
    blob_write(np.zeros((20, 20, 20)), scene / "zeros.blob")
    pipeline(capsys, scene, "--voxels-out", scene / "v2.blob", "--bev-out", scene / "b2.blob", "--occupancy", scene / "zeros.blob")
    assert not blob_read(scene / "b2.blob").any()


def test_pipeline_thickness_input(scene, capsys, rng):
    blob_write(rng.uniform(size=(8, 8, 12)), scene / "thick.blob")
    code, _, _ = pipeline(
        capsys, scene, "--voxels-out", scene / "v.blob", "--bev-out", scene / "b.blob", "--thickness", scene / "thick.blob"
    )
    assert code == 0


def test_pipeline_dim_mismatch_names_stage(scene, capsys):
    blob_write(np.ones((16, 16)), scene / "depth.blob")
    code, _, err = pipeline(capsys, scene, "--voxels-out", scene / "v.blob", "--bev-out", scene / "b.blob")
    assert code != 0 and "encode" in err and "DimMismatch" in err
    code, _, err = pipeline(
        capsys, scene, "--voxels-out", scene / "v.blob", "--bev-out", scene / "b.blob",
        "--set", "feature_stride=2", "--occupancy", scene / "feat.blob",
    )
    assert code != 0 and "gate" in err
    assert not (scene / "v.blob").exists() and not (scene / "b.blob").exists()


# --- loss ------------------------------------------------------------------------

@pytest.fixture
def loss_case(tmp_path, rng):
    depth = rng.uniform(2.0, 46.8, (16, 16))
    blob_write(depth, tmp_path / "d.blob")
    cfg = PipelineConfig(num_bins=8, extension_radius=1)
    one_hot = encode_one_hot(DepthMap(depth[2::4, 2::4]), cfg.bin_spec)
    target = soft_extended_target(one_hot, extension_mask(one_hot, 1))
    blob_write(target, tmp_path / "target.blob")
    # central differences at h=1e-4 lose accuracy within ~0.01 of 0 and 1
    blob_write(rng.uniform(0.05, 0.95, (4, 4, 8)), tmp_path / "pred.blob")
    return tmp_path, ["--set", "num_bins=8", "--set", "extension_radius=1"]


def test_loss_perfect_prediction(loss_case, capsys):
    path, opts = loss_case
    code, rep, _ = run(capsys, "loss", path / "target.blob", path / "d.blob", *opts, "--grad-out", path / "g.blob")
    assert code == 0 and rep["loss"] == "0.000000000"
    assert not blob_read(path / "g.blob").any()


def test_loss_check(loss_case, capsys):
    path, opts = loss_case
    code, rep, _ = run(capsys, "loss", path / "pred.blob", path / "d.blob", *opts, "--check")
    assert code == 0
    assert float(rep["loss"]) > 0
    assert float(rep["fd_max_rel_error"]) < 1e-5 and rep["fd_pass"] == "true"


def test_loss_nan_prediction(loss_case, capsys):
    path, opts = loss_case
    payload = np.full((4, 4, 8), 0.5, dtype="<f4")
    payload[1, 2, 3] = np.nan
    (path / "nan.blob").write_bytes(b"DTF1" + struct.pack("<4I", 3, 4, 4, 8) + payload.tobytes())
    code, rep, err = run(capsys, "loss", path / "nan.blob", path / "d.blob", *opts)
    assert code != 0 and "NonFiniteInput" in err and "loss" not in rep


def test_loss_figure_and_cleanup(loss_case, capsys):
    path, opts = loss_case
    code, rep, _ = run(
        capsys, "loss", path / "pred.blob", path / "d.blob", *opts,
        "--grad-out", path / "g.blob", "--figure", path / "ray.png", "--pixel", 1, 2,
    )
    assert code == 0 and (path / "ray.png").read_bytes()[:4] == b"\x89PNG"
    # a bad pixel fails after the gradient was written: nothing may remain
    code, _, _ = run(
        capsys, "loss", path / "pred.blob", path / "d.blob", *opts,
        "--grad-out", path / "g2.blob", "--figure", path / "ray2.png", "--pixel", 9, 0,
    )
    assert code != 0
    assert not (path / "g2.blob").exists() and not (path / "ray2.png").exists()


# --- viz -------------------------------------------------------------------------

def test_viz_tri_state(tmp_path, capsys):
    grid = np.full((6, 5, 4), -1.0)
    grid[1:3, 1:4, :] = 0.0
    grid[2, 2, :] = 1.0
    blob_write(grid, tmp_path / "occ.blob")
    code, rep, _ = run(
        capsys, "viz", tmp_path / "occ.blob", "--axis", "z", "--index", 2, "-o", tmp_path / "s.pgm",
        "--figure", tmp_path / "s.png",
    )
    assert code == 0 and rep["size"] == "6x5" and rep["gray_levels"] == "3"
    img = decode_pgm((tmp_path / "s.pgm").read_bytes())
    assert set(np.unique(img)) == {0, 128, 255}
    assert (tmp_path / "s.png").exists()


def test_viz_zero_grid(tmp_path, capsys):
    blob_write(np.zeros((3, 4, 5, 2)), tmp_path / "z.blob")
    code, rep, _ = run(capsys, "viz", tmp_path / "z.blob", "--axis", "x", "--index", 0, "-o", tmp_path / "z.pgm")
    assert code == 0 and rep["gray_levels"] == "1"


def test_viz_slice_out_of_range(tmp_path, capsys):
    blob_write(np.zeros((3, 4, 5)), tmp_path / "z.blob")
    code, _, err = run(capsys, "viz", tmp_path / "z.blob", "--index", 5, "-o", tmp_path / "z.pgm")
    assert code != 0 and "SliceOutOfRange" in err
    assert not (tmp_path / "z.pgm").exists()


# --- config plumbing -----------------------------------------------------------

def test_set_overrides_config_file(tmp_path, capsys):
    blob_write(np.array([[3.0]]), tmp_path / "d.blob")
    (tmp_path / "c.cfg").write_text("num_bins=6\nfeature_stride=1\n")
    code, rep, _ = run(capsys, "encode", tmp_path / "d.blob", "-o", tmp_path / "o.blob", "--config", tmp_path / "c.cfg")
    assert rep["dims"] == "1x1x6"
    code, rep, _ = run(
        capsys, "encode", tmp_path / "d.blob", "-o", tmp_path / "o.blob", "--config", tmp_path / "c.cfg", "--set", "num_bins=9"
    )
    assert rep["dims"] == "1x1x9"


def test_unknown_config_key(tmp_path, capsys):
    blob_write(np.array([[3.0]]), tmp_path / "d.blob")
    code, _, err = run(capsys, "encode", tmp_path / "d.blob", "-o", tmp_path / "o.blob", "--set", "nope=1")
    assert code != 0 and "nope" in err


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "thickfield.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "0.1.0"
