"""Frustum lifting, frustum-to-voxel grid sampling, occupancy gating and BEV collapse."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .binning import lid_continuous
from .core import BinSpec, CameraCalibration, GridSpec, VoxelGrid, check_finite
from .errors import DimMismatch, NonFiniteInput, RangeError

# fixed work unit for sample_to_voxels; independent of the thread count so
# results never depend on scheduling
_CHUNK = 1 << 15


@dataclass(frozen=True)
class BevGrid:
    values: np.ndarray  # (X, Y, Z * C)
    grid_spec: GridSpec
    channels: int

    def __post_init__(self):
        x, y, z = self.grid_spec.dims
        if self.values.shape != (x, y, z * self.channels):
            raise DimMismatch(f"BEV {self.values.shape} vs grid {self.grid_spec.dims} x {self.channels}")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteInput("BEV values must be finite")


@dataclass(frozen=True)
class OccupancyField:
    values: np.ndarray  # (X, Y, Z) in [0, 1]

    def __post_init__(self):
        vals = check_finite(self.values, "occupancy")
        if vals.ndim == 4 and vals.shape[-1] == 1:
            vals = vals[..., 0]
        if vals.ndim != 3:
            raise DimMismatch(f"occupancy must be (X, Y, Z), got {vals.shape}")
        if np.any(vals < 0) or np.any(vals > 1):
            raise RangeError("occupancy values must lie in [0, 1]")
        object.__setattr__(self, "values", vals)


def lift_features(weights, features) -> np.ndarray:
    """Per-pixel outer product of depth weights ``(W, H, D)`` and features ``(W, H, C)``."""
    w = check_finite(getattr(weights, "values", weights), "depth weights")
    f = check_finite(features, "features")
    if w.ndim != 3 or f.ndim != 3 or w.shape[:2] != f.shape[:2]:
        raise DimMismatch(f"depth weights {w.shape} and features {f.shape} disagree on (W, H)")
    return w[:, :, :, None] * f[:, :, None, :]


def voxel_centers(spec: GridSpec) -> np.ndarray:
    """World-frame cell centers, shape ``(X, Y, Z, 3)``."""
    axes = [
        lo + (np.arange(n) + 0.5) * spec.voxel_size
        for (lo, _), n in zip((spec.x_range, spec.y_range, spec.z_range), spec.dims)
    ]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def frustum_coordinates(points, calib: CameraCalibration, bin_spec: BinSpec, image_size, stride: int):
    """Map world points to continuous frustum coordinates.

    Returns ``(coords, visible)`` where ``coords[..., :]`` is
    ``(u_feat, v_feat, bin)`` with the bin coordinate centered on bin middles,
    and ``visible`` marks points in front of the camera, inside the image and
    inside the depth range.
    """
    width, height = image_size
    uv, depth = calib.project_world(points)
    u, v = uv[..., 0], uv[..., 1]
    with np.errstate(invalid="ignore"):
        visible = (
            (depth > 0)
            & (depth >= bin_spec.d_min)
            & (depth <= bin_spec.d_max)
            & (u >= -0.5)
            & (u < width - 0.5)
            & (v >= -0.5)
            & (v < height - 0.5)
        )
    zp = lid_continuous(np.where(visible, depth, bin_spec.d_min), bin_spec)
    coords = np.stack(
        [(u + 0.5) / stride - 0.5, (v + 0.5) / stride - 0.5, zp - 0.5], axis=-1
    )
    return np.where(visible[..., None], coords, 0.0), visible


def _axis_weights(x, n):
    if n == 1:
        zero = np.zeros(x.shape, dtype=np.int64)
        return zero, zero, np.zeros_like(x)
    x = np.clip(x, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(x).astype(np.int64), n - 2)
    return i0, i0 + 1, x - i0


def _sample_chunk(frustum, coords, visible, mode):
    n_u, n_v, n_d, _ = frustum.shape
    if mode == "nearest":
        idx = [
            np.clip(np.floor(coords[:, a] + 0.5).astype(np.int64), 0, n - 1)
            for a, n in enumerate((n_u, n_v, n_d))
        ]
        out = frustum[idx[0], idx[1], idx[2]]
    else:
        (u0, u1, fu), (v0, v1, fv), (d0, d1, fd) = (
            _axis_weights(coords[:, a], n) for a, n in enumerate((n_u, n_v, n_d))
        )
        fu, fv, fd = fu[:, None], fv[:, None], fd[:, None]

        # nested lerps reproduce a constant field exactly
        def lerp(a, b, t):
            return a + t * (b - a)

        def along_u(v, d):
            return lerp(frustum[u0, v, d], frustum[u1, v, d], fu)

        out = lerp(
            lerp(along_u(v0, d0), along_u(v1, d0), fv),
            lerp(along_u(v0, d1), along_u(v1, d1), fv),
            fd,
        )
    return np.where(visible[:, None], out, 0.0)


def sample_to_voxels(
    frustum,
    calib: CameraCalibration,
    spec: GridSpec,
    bin_spec: BinSpec,
    feature_stride: int,
    mode: str = "trilinear",
    threads: int = 1,
) -> VoxelGrid:
    """Resample a ``(W_F, H_F, D, C)`` frustum volume onto the voxel grid.

    Each voxel center is projected into the image; voxels behind the camera,
    outside the image or outside the depth range receive zeros. Sample
    coordinates inside the image are clamped to the frustum border.
    """
    g = check_finite(frustum, "frustum")
    if g.ndim != 4:
        raise DimMismatch(f"frustum must be (W_F, H_F, D, C), got {g.shape}")
    if g.shape[2] != bin_spec.num_bins:
        raise DimMismatch(f"frustum has {g.shape[2]} depth bins, bin spec has {bin_spec.num_bins}")
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    stride = int(feature_stride)
    if stride < 1 or stride != feature_stride:
        raise ValueError("feature stride must be a positive integer")
    image_size = (g.shape[0] * stride, g.shape[1] * stride)

    centers = voxel_centers(spec).reshape(-1, 3)
    out = np.empty((centers.shape[0], g.shape[3]))

    def work(start):
        pts = centers[start : start + _CHUNK]
        coords, visible = frustum_coordinates(pts, calib, bin_spec, image_size, stride)
        out[start : start + _CHUNK] = _sample_chunk(g, coords, visible, mode)

    starts = range(0, centers.shape[0], _CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    return VoxelGrid(out.reshape(spec.dims + (g.shape[3],)), spec)


def occupancy_gate(voxels: VoxelGrid, occupancy) -> VoxelGrid:
    """Scale every voxel's features by its occupancy probability."""
    occ = occupancy if isinstance(occupancy, OccupancyField) else OccupancyField(occupancy)
    if occ.values.shape != voxels.values.shape[:3]:
        raise DimMismatch(f"occupancy {occ.values.shape} vs voxels {voxels.values.shape[:3]}")
    return VoxelGrid(occ.values[..., None] * voxels.values, voxels.grid_spec)


def collapse_to_bev(voxels: VoxelGrid) -> BevGrid:
    """Stack the vertical axis into channels: ``bev[i, j, k * C + c] = v[i, j, k, c]``."""
    x, y, z, c = voxels.values.shape
    return BevGrid(voxels.values.reshape(x, y, z * c), voxels.grid_spec, c)


def expand_bev(bev: BevGrid) -> VoxelGrid:
    x, y, _ = bev.values.shape
    return VoxelGrid(bev.values.reshape(x, y, -1, bev.channels), bev.grid_spec)
