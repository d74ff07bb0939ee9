"""Command-line entry point: ``thickfield {encode,occ-labels,pipeline,loss,viz}``.

Numeric settings come from a ``key=value`` config file (``--config``) and
can be overridden with repeated ``--set key=value`` flags. Reports go to
stdout as tab-separated ``key<TAB>value`` lines.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .binning import lid_edges
from .blob import MAGIC, blob_read, decode_blob, encode_blob
from .config import PipelineConfig, parse_pairs
from .core import DepthMap, downsample_depth
from .depth import (
    ThicknessField,
    encode_one_hot,
    extension_mask,
    soft_extended_target,
    thickness_focal_loss,
)
from .errors import DimMismatch, DTFError
from .frustum import collapse_to_bev, lift_features, occupancy_gate, sample_to_voxels
from .kitti import label_to_world_box, parse_calib, parse_labels, read_depth_png, read_velodyne
from .occupancy import box_labels, point_cloud_labels, union_labels
from .viz import encode_pgm, ray_profile_figure, render_slice, slice_figure


class StageError(DTFError):
    pass


@contextmanager
def stage(name):
    try:
        yield
    except StageError:
        raise
    except DTFError as exc:
        raise StageError(f"{name}: {type(exc).__name__}: {exc}") from exc


class Outputs:
    """Collects output files; writes each atomically and removes them all on failure."""

    def __init__(self):
        self.written = []

    def write(self, path, data: bytes):
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        self.written.append(path)

    def figure(self, render, path, *args, **kwargs):
        render(*args, path=path, **kwargs)
        self.written.append(Path(path))

    def discard(self):
        for p in self.written:
            Path(p).unlink(missing_ok=True)
        self.written.clear()


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides = parse_pairs(args.set or [])
    return cfg.with_overrides(overrides)


def load_depth(path) -> DepthMap:
    data = Path(path).read_bytes()
    if data[:4] == MAGIC:
        arr = decode_blob(data)
        if arr.ndim != 2:
            raise DimMismatch(f"depth blob must be rank 2, got {arr.shape}")
        return DepthMap(arr.astype(np.float64))
    return read_depth_png(data)


def feature_depth(path, cfg: PipelineConfig, shape=None) -> DepthMap:
    depth = load_depth(path)
    if shape is not None:
        expected = (shape[0] * cfg.feature_stride, shape[1] * cfg.feature_stride)
        if depth.values.shape != expected:
            raise DimMismatch(
                f"depth map is {depth.values.shape}, expected {expected} for feature plane {tuple(shape)}"
                f" at stride {cfg.feature_stride}"
            )
    return downsample_depth(depth, cfg.feature_stride, cfg.downsample)


def emit(key, value, out=None):
    print(f"{key}\t{value}", file=out or sys.stdout)


def cmd_encode(args, cfg: PipelineConfig, outputs: Outputs):
    with stage("encode"):
        depth = feature_depth(args.depth, cfg)
        one_hot = encode_one_hot(depth, cfg.bin_spec)
    if args.mode == "onehot":
        outputs.write(args.output, encode_blob(one_hot.values))
        emit("onehot", args.output)
    else:
        with stage("target"):
            mask = extension_mask(one_hot, cfg.require_radius())
            target = soft_extended_target(one_hot, mask)
        mask_path = args.mask_out or str(Path(args.output).with_suffix("")) + "_mask.blob"
        outputs.write(args.output, encode_blob(target))
        outputs.write(mask_path, encode_blob(mask.values))
        emit("target", args.output)
        emit("mask", mask_path)
    emit("dims", "x".join(str(d) for d in one_hot.values.shape))
    emit("valid_pixels", int(one_hot.valid.sum()))


def cmd_occ_labels(args, cfg: PipelineConfig, outputs: Outputs):
    spec = cfg.grid_spec
    with stage("calib"):
        calib = parse_calib(Path(args.calib).read_text())
    with stage("velodyne"):
        points = read_velodyne(Path(args.velodyne).read_bytes()).astype(np.float64)
    with stage("labels"):
        records = parse_labels(Path(args.labels).read_text())
        wanted = {c.strip() for c in cfg.categories.split(",") if c.strip()}
        boxes = [
            label_to_world_box(r, calib)
            for r in records
            if not r.is_dontcare and ("all" in wanted or r.category in wanted)
        ]
    with stage("point-labels"):
        from_points = point_cloud_labels(points, calib.camera_center_world(), spec)
    with stage("box-labels"):
        from_boxes = box_labels(boxes, cfg.shrink_scale, spec)
    merged = union_labels(from_points, from_boxes)
    outputs.write(args.output, encode_blob(merged.as_float()))
    emit("labels", args.output)
    emit("dims", "x".join(str(d) for d in merged.values.shape))
    emit("boxes", len(boxes))
    for name, count in merged.counts().items():
        emit(name, count)


def cmd_pipeline(args, cfg: PipelineConfig, outputs: Outputs):
    bins, spec = cfg.bin_spec, cfg.grid_spec
    with stage("features"):
        features = blob_read(args.features).astype(np.float64)
        if features.ndim != 3:
            raise DimMismatch(f"feature blob must be (W_F, H_F, C), got {features.shape}")
    with stage("calib"):
        calib = parse_calib(Path(args.calib).read_text())
    with stage("encode"):
        depth = feature_depth(args.depth, cfg, features.shape[:2])
        weights = encode_one_hot(depth, bins).values
    if args.thickness:
        with stage("thickness"):
            weights = ThicknessField(blob_read(args.thickness)).values
    with stage("lift"):
        frustum = lift_features(weights, features)
    with stage("sample"):
        threads = args.threads or cfg.threads
        voxels = sample_to_voxels(frustum, calib, spec, bins, cfg.feature_stride, cfg.interpolation, threads)
    if args.occupancy:
        with stage("gate"):
            voxels = occupancy_gate(voxels, blob_read(args.occupancy))
    with stage("collapse"):
        bev = collapse_to_bev(voxels)
    outputs.write(args.voxels_out, encode_blob(voxels.values))
    outputs.write(args.bev_out, encode_blob(bev.values))
    emit("voxels", args.voxels_out)
    emit("bev", args.bev_out)
    emit("voxel_dims", "x".join(str(d) for d in voxels.values.shape))
    emit("nonzero_voxels", int(np.any(voxels.values != 0, axis=-1).sum()))


def finite_difference_check(pred, target, mask, alpha, gamma, valid=None, h=1e-4, samples=None, seed=0):
    """Max relative error between the analytic gradient and central differences."""
    pred = np.array(pred, dtype=np.float64)
    _, grad = thickness_focal_loss(pred, target, mask, alpha, gamma, valid)
    flat = np.arange(pred.size)
    if samples is not None and samples < pred.size:
        flat = np.random.default_rng(seed).choice(pred.size, size=samples, replace=False)
    worst = 0.0
    for idx in flat:
        pos = np.unravel_index(idx, pred.shape)
        x = pred[pos]
        hi, lo = min(x + h, 1.0), max(x - h, 0.0)
        pred[pos] = hi
        f_hi, _ = thickness_focal_loss(pred, target, mask, alpha, gamma, valid)
        pred[pos] = lo
        f_lo, _ = thickness_focal_loss(pred, target, mask, alpha, gamma, valid)
        pred[pos] = x
        numeric = (f_hi - f_lo) / (hi - lo)
        analytic = grad[pos]
        denom = max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def cmd_loss(args, cfg: PipelineConfig, outputs: Outputs):
    with stage("prediction"):
        pred = ThicknessField(blob_read(args.pred))
    with stage("encode"):
        depth = feature_depth(args.depth, cfg, pred.values.shape[:2])
        one_hot = encode_one_hot(depth, cfg.bin_spec, pred.values.shape[:2])
        if one_hot.values.shape != pred.values.shape:
            raise DimMismatch(f"prediction {pred.values.shape} vs encoding {one_hot.values.shape}")
        mask = extension_mask(one_hot, cfg.require_radius())
        target = soft_extended_target(one_hot, mask)
    with stage("loss"):
        loss, grad = thickness_focal_loss(pred, target, mask, cfg.alpha, cfg.gamma, one_hot.valid)
    emit("loss", f"{loss:.9f}")
    if args.grad_out:
        outputs.write(args.grad_out, encode_blob(grad))
        emit("grad", args.grad_out)
    if args.check:
        err = finite_difference_check(
            pred.values, target, mask, cfg.alpha, cfg.gamma, one_hot.valid, samples=args.check_samples, seed=args.seed
        )
        emit("fd_max_rel_error", f"{err:.3e}")
        emit("fd_pass", str(err < 1e-5).lower())
    if args.figure:
        u, v = args.pixel
        if not (0 <= u < pred.values.shape[0] and 0 <= v < pred.values.shape[1]):
            raise DimMismatch(f"pixel ({u}, {v}) outside the prediction plane")
        outputs.figure(
            ray_profile_figure,
            args.figure,
            pred.values[u, v],
            target[u, v],
            mask.values[u, v],
            lid_edges(cfg.bin_spec),
            title=f"pixel ({u}, {v})",
        )
        emit("figure", args.figure)


def cmd_viz(args, cfg: PipelineConfig, outputs: Outputs):
    with stage("viz"):
        volume = blob_read(args.blob)
        image = render_slice(volume, args.axis, args.index)
    outputs.write(args.output, encode_pgm(image))
    emit("image", args.output)
    emit("size", f"{image.shape[1]}x{image.shape[0]}")
    emit("gray_levels", len(np.unique(image)))
    if args.figure:
        outputs.figure(slice_figure, args.figure, volume, args.axis, args.index)
        emit("figure", args.figure)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")

    parser = argparse.ArgumentParser(prog="thickfield", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[common], help="depth map -> one-hot or soft-extended target")
    p.add_argument("depth", help="16-bit depth PNG (or rank-2 tensor blob)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--mode", choices=("onehot", "target"), default="onehot")
    p.add_argument("--mask-out", help="mask blob path for --mode target")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("occ-labels", parents=[common], help="KITTI scan + labels -> tri-state occupancy grid")
    p.add_argument("--velodyne", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_occ_labels)

    p = sub.add_parser("pipeline", parents=[common], help="lift, voxelize, gate and collapse to BEV")
    p.add_argument("depth")
    p.add_argument("features", help="(W_F, H_F, C) feature blob")
    p.add_argument("calib")
    p.add_argument("--voxels-out", required=True)
    p.add_argument("--bev-out", required=True)
    p.add_argument("--occupancy", help="(X, Y, Z) occupancy blob in [0, 1]")
    p.add_argument("--thickness", help="(W_F, H_F, D) thickness-field blob used instead of the one-hot weights")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("loss", parents=[common], help="masked focal thickness loss and gradient")
    p.add_argument("pred", help="(W_F, H_F, D) prediction blob")
    p.add_argument("depth")
    p.add_argument("--grad-out")
    p.add_argument("--check", action="store_true", help="compare the gradient with central differences")
    p.add_argument("--check-samples", type=int, help="check a random subset of entries")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--figure", help="PNG of the prediction along one ray")
    p.add_argument("--pixel", type=int, nargs=2, default=(0, 0), metavar=("U", "V"))
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("viz", parents=[common], help="render a grid slice as a PGM")
    p.add_argument("blob")
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--figure", help="also save a matplotlib rendering")
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    outputs = Outputs()
    try:
        cfg = load_config(args)
        args.func(args, cfg, outputs)
    except (DTFError, OSError) as exc:
        outputs.discard()
        print(f"thickfield {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        outputs.discard()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
