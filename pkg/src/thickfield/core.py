"""Shared domain types: depth/grid specs, depth maps, calibration, voxel grids.

Array layout convention used throughout the package: image-aligned volumes
are indexed ``[u, v, ...]`` (width first), matching the ``(W, H, ...)`` dims
written to tensor blobs. World-frame grids are indexed ``[i, j, k, ...]``
along x (forward), y (left), z (up).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimMismatch,
    InvalidSpec,
    NonCommensurateRange,
    NonFiniteInput,
    SingularCalibration,
)

DEPTH_SENTINEL = 0.0

_COMMENSURATE_RTOL = 1e-9


def _frozen(arr, dtype=np.float64):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BinSpec:
    """Depth range ``[d_min, d_max]`` split into ``num_bins`` LID bins."""

    d_min: float
    d_max: float
    num_bins: int

    def __post_init__(self):
        d_min, d_max = float(self.d_min), float(self.d_max)
        if not (np.isfinite(d_min) and np.isfinite(d_max)):
            raise InvalidSpec("depth range must be finite")
        # d_min = 0 and a single bin are tolerated: binning itself is well defined there
        if d_min < 0 or d_max <= d_min:
            raise InvalidSpec(f"need 0 <= d_min < d_max, got [{d_min}, {d_max}]")
        if int(self.num_bins) != self.num_bins or self.num_bins < 1:
            raise InvalidSpec(f"num_bins must be a positive integer, got {self.num_bins}")
        object.__setattr__(self, "d_min", d_min)
        object.__setattr__(self, "d_max", d_max)
        object.__setattr__(self, "num_bins", int(self.num_bins))

    @property
    def bin_size(self) -> float:
        """Width of the first LID bin (the growth step of every later bin)."""
        n = self.num_bins
        return 2.0 * (self.d_max - self.d_min) / (n * (n + 1))


@dataclass(frozen=True)
class GridSpec:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]
    voxel_size: float

    def __post_init__(self):
        vs = float(self.voxel_size)
        if not np.isfinite(vs) or vs <= 0:
            raise InvalidSpec(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "voxel_size", vs)
        for name in ("x_range", "y_range", "z_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise InvalidSpec(f"{name} must be a finite interval with max > min")
            object.__setattr__(self, name, (lo, hi))
        grid_dims(self)

    @property
    def dims(self) -> tuple[int, int, int]:
        return grid_dims(self)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.x_range[0], self.y_range[0], self.z_range[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.x_range[1], self.y_range[1], self.z_range[1]])


def grid_dims(spec: GridSpec) -> tuple[int, int, int]:
    """Cell counts along x, y, z; raises if a range is not a whole number of voxels."""
    dims = []
    for name in ("x_range", "y_range", "z_range"):
        lo, hi = getattr(spec, name)
        ratio = (hi - lo) / spec.voxel_size
        n = round(ratio)
        if n < 1 or abs(ratio - n) > _COMMENSURATE_RTOL * max(1.0, abs(ratio)):
            raise NonCommensurateRange(
                f"{name} length {hi - lo} is not a multiple of voxel size {spec.voxel_size}"
            )
        dims.append(int(n))
    return tuple(dims)


KITTI_GRID = GridSpec((2.0, 46.8), (-30.08, 30.08), (-3.0, 1.0), 0.16)


@dataclass(frozen=True)
class DepthMap:
    """Metric depth per pixel, ``values[u, v]``; 0.0 marks a missing measurement."""

    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 2:
            raise DimMismatch(f"depth map must be 2-D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise NonFiniteInput("depth map contains non-finite values")
        if np.any(vals < 0):
            raise InvalidSpec("depth values must be positive or the 0.0 sentinel")
        object.__setattr__(self, "values", vals)

    @property
    def width(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values != DEPTH_SENTINEL


def downsample_depth(depth: DepthMap, stride: int, mode: str = "nearest") -> DepthMap:
    """Reduce a depth map by an integer stride.

    ``nearest`` keeps the pixel at offset ``stride // 2`` inside each block;
    ``min`` keeps the closest valid depth in the block (sentinel if none).
    """
    stride = int(stride)
    w, h = depth.values.shape
    if stride < 1 or w % stride or h % stride:
        raise DimMismatch(f"depth map {w}x{h} is not divisible by stride {stride}")
    if mode == "nearest":
        off = stride // 2
        return DepthMap(depth.values[off::stride, off::stride])
    if mode == "min":
        blocks = depth.values.reshape(w // stride, stride, h // stride, stride)
        masked = np.where(blocks > 0, blocks, np.inf)
        out = masked.min(axis=(1, 3))
        return DepthMap(np.where(np.isfinite(out), out, DEPTH_SENTINEL))
    raise ValueError(f"unknown downsample mode {mode!r}")


def apply_affine(mat: np.ndarray, points) -> np.ndarray:
    """``mat[:3, :3] @ p + mat[:3, 3]`` for every point in ``points[..., 3]``.

    Written out per component so each output element is computed the same
    way regardless of array size (no BLAS blocking differences).
    """
    pts = np.asarray(points, dtype=np.float64)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    rows = [mat[r, 0] * x + mat[r, 1] * y + mat[r, 2] * z + mat[r, 3] for r in range(mat.shape[0])]
    return np.stack(rows, axis=-1)


def _homogeneous(mat34: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    out[:3, :] = mat34
    return out


@dataclass(frozen=True)
class CameraCalibration:
    """KITTI-style camera model: ``pixel ~ P @ R0 @ Tr @ [x_world, 1]``."""

    intrinsics: np.ndarray  # 3x4 projection matrix
    rectification: np.ndarray  # 3x3
    lidar_to_camera: np.ndarray  # 3x4 rigid transform
    _world_to_rect: np.ndarray = field(init=False, repr=False, compare=False)
    _rect_to_world: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = _frozen(self.intrinsics)
        r0 = _frozen(self.rectification)
        tr = _frozen(self.lidar_to_camera)
        if p.shape != (3, 4) or r0.shape != (3, 3) or tr.shape != (3, 4):
            raise DimMismatch(
                f"calibration shapes must be 3x4, 3x3, 3x4; got {p.shape}, {r0.shape}, {tr.shape}"
            )
        for m in (p, r0, tr):
            if not np.all(np.isfinite(m)):
                raise NonFiniteInput("calibration matrices must be finite")
        r0_h = np.eye(4)
        r0_h[:3, :3] = r0
        world_to_rect = r0_h @ _homogeneous(tr)
        if abs(np.linalg.det(world_to_rect)) < 1e-12 or abs(np.linalg.det(p[:, :3])) < 1e-12:
            raise SingularCalibration("calibration is not invertible")
        rect_to_world = np.linalg.inv(world_to_rect)
        object.__setattr__(self, "intrinsics", p)
        object.__setattr__(self, "rectification", r0)
        object.__setattr__(self, "lidar_to_camera", tr)
        object.__setattr__(self, "_world_to_rect", _frozen(world_to_rect))
        object.__setattr__(self, "_rect_to_world", _frozen(rect_to_world))

    @classmethod
    def identity(cls) -> "CameraCalibration":
        return cls(np.eye(3, 4), np.eye(3), np.eye(3, 4))

    @property
    def world_to_rect(self) -> np.ndarray:
        return self._world_to_rect

    @property
    def rect_to_world(self) -> np.ndarray:
        return self._rect_to_world

    def world_to_camera(self, points) -> np.ndarray:
        return apply_affine(self._world_to_rect[:3], points)

    def camera_to_world(self, points) -> np.ndarray:
        return apply_affine(self._rect_to_world[:3], points)

    def project_camera(self, points):
        """Project rectified-camera points; returns ``(uv, depth)``.

        ``depth`` is the third homogeneous coordinate, i.e. the z distance
        seen by the projecting camera. ``uv`` is NaN where depth <= 0.
        """
        hom = apply_affine(self.intrinsics, points)
        depth = hom[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = hom[..., :2] / depth[..., None]
        uv = np.where((depth > 0)[..., None], uv, np.nan)
        return uv, depth

    def project_world(self, points):
        return self.project_camera(self.world_to_camera(points))

    def camera_center_world(self) -> np.ndarray:
        """Optical center of the projecting camera, in the world frame."""
        p = self.intrinsics
        center_rect = -np.linalg.solve(p[:, :3], p[:, 3])
        return self.camera_to_world(center_rect)


@dataclass(frozen=True)
class VoxelGrid:
    """Feature volume ``values[i, j, k, c]`` over a :class:`GridSpec`."""

    values: np.ndarray
    grid_spec: GridSpec

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 4 or vals.shape[:3] != self.grid_spec.dims:
            raise DimMismatch(
                f"voxel values {vals.shape} do not match grid dims {self.grid_spec.dims}"
            )
        if not np.all(np.isfinite(vals)):
            raise NonFiniteInput("voxel values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def channels(self) -> int:
        return self.values.shape[3]


def check_finite(arr, what: str = "input") -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{what} contains non-finite values")
    return arr
