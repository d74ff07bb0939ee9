"""Tri-state occupancy labels from LiDAR rays and (shrunken) 3D boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import GridSpec, check_finite
from .errors import BadScale, DegenerateRay, DimMismatch, RangeError, SpecMismatch
from .frustum import voxel_centers

OCCUPIED = 1
FREE = 0
UNKNOWN = -1


@dataclass(frozen=True)
class OccupancyLabelGrid:
    """Labels ``values[i, j, k]`` in {OCCUPIED, FREE, UNKNOWN}.

    The integer codes double as the blob encoding (1.0, 0.0, -1.0) and their
    numeric order is the merge order, so a union is an elementwise max.
    """

    values: np.ndarray
    grid_spec: GridSpec

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != self.grid_spec.dims:
            raise DimMismatch(f"labels {vals.shape} vs grid {self.grid_spec.dims}")
        if not np.all((vals == OCCUPIED) | (vals == FREE) | (vals == UNKNOWN)):
            raise RangeError("labels must be tri-state")
        vals = vals.astype(np.int8)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def unknown(cls, spec: GridSpec) -> "OccupancyLabelGrid":
        return cls(np.full(spec.dims, UNKNOWN, dtype=np.int8), spec)

    def counts(self) -> dict:
        return {name: int(np.sum(self.values == code)) for name, code in
                (("occupied", OCCUPIED), ("free", FREE), ("unknown", UNKNOWN))}

    def as_float(self) -> np.ndarray:
        return self.values.astype(np.float32)


def _normalize_angle(theta: float) -> float:
    t = math.remainder(float(theta), 2 * math.pi)
    return math.pi if t <= -math.pi else t


@dataclass(frozen=True)
class OrientedBox3D:
    """Cuboid with geometric center, dims ``(h, w, l)`` and yaw about world z.

    ``l`` runs along the heading (yaw 0 = +x), ``w`` across it, ``h`` vertically.
    """

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        dims = tuple(float(d) for d in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise DimMismatch("box needs a 3-D center and three dims")
        if not all(math.isfinite(v) for v in center + dims + (float(self.yaw),)):
            raise RangeError("box parameters must be finite")
        if min(dims) <= 0:
            raise RangeError(f"box dims must be positive, got {dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", _normalize_angle(self.yaw))

    @property
    def h(self) -> float:
        return self.dims[0]

    @property
    def w(self) -> float:
        return self.dims[1]

    @property
    def l(self) -> float:  # noqa: E743
        return self.dims[2]

    def corners(self) -> np.ndarray:
        """The 8 corners, shape ``(8, 3)``; bit order (x, y, z) = (4, 2, 1)."""
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        local = signs * np.array([self.l, self.w, self.h]) / 2.0
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return local @ rot.T + np.array(self.center)


def shrink_box(box: OrientedBox3D, scale: float) -> OrientedBox3D:
    if not 0 < scale <= 1:
        raise BadScale(f"shrink scale must be in (0, 1], got {scale}")
    return OrientedBox3D(box.center, tuple(d * scale for d in box.dims), box.yaw)


def point_in_box(points, box: OrientedBox3D):
    """Closed containment test; vectorized over ``points[..., 3]``."""
    p = np.asarray(points, dtype=np.float64)
    d = p - np.array(box.center)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = c * d[..., 0] + s * d[..., 1]
    y = -s * d[..., 0] + c * d[..., 1]
    z = d[..., 2]
    inside = (np.abs(x) <= box.l / 2) & (np.abs(y) <= box.w / 2) & (np.abs(z) <= box.h / 2)
    return bool(inside) if inside.ndim == 0 else inside


class RayTraversal(NamedTuple):
    passed: list  # voxel indices crossed before the end point, in order
    hit: tuple | None  # voxel containing the end point, if inside the grid


def _to_grid(points, spec: GridSpec) -> np.ndarray:
    return (np.asarray(points, dtype=np.float64) - spec.lower) / spec.voxel_size


def _dda(start, end, dims):
    """Amanatides-Woo stepping for a batch of segments in voxel units.

    Yields ``(ray_ids, cells)`` once per step; a ray appears at most once per
    step and its cells come out in traversal order.
    """
    n = np.array(dims, dtype=np.float64)
    d = end - start
    t_enter = np.zeros(len(start))
    t_exit = np.ones(len(start))
    with np.errstate(divide="ignore", invalid="ignore"):
        for a in range(3):
            moving = d[:, a] != 0
            ta = np.where(moving, (0.0 - start[:, a]) / d[:, a], -np.inf)
            tb = np.where(moving, (n[a] - start[:, a]) / d[:, a], np.inf)
            # cells are half-open, so a segment lying on the upper face is outside
            outside = ~moving & ((start[:, a] < 0) | (start[:, a] >= n[a]))
            t_enter = np.maximum(t_enter, np.minimum(ta, tb))
            t_exit = np.minimum(t_exit, np.where(outside, -np.inf, np.maximum(ta, tb)))
    active = t_enter < t_exit
    ids = np.flatnonzero(active)
    if ids.size == 0:
        return
    d = d[ids]
    p0 = start[ids] + t_enter[ids, None] * d
    t_exit = t_exit[ids]
    cell = np.floor(p0)
    # on a cell face heading downward, the segment lives in the lower cell
    cell = np.where((d < 0) & (cell == p0), cell - 1, cell)
    cell = np.clip(cell, 0, n - 1).astype(np.int64)
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        boundary = cell + (step > 0)
        t_max = np.where(d != 0, (boundary - start[ids]) / d, np.inf)
        t_delta = np.where(d != 0, 1.0 / np.abs(d), np.inf)
    rows = np.arange(len(ids))
    while ids.size:
        yield ids, cell
        axis = np.argmin(t_max, axis=1)
        t_next = t_max[rows, axis]
        cell = cell.copy()
        cell[rows, axis] += step[rows, axis]
        t_max = t_max.copy()
        t_max[rows, axis] += t_delta[rows, axis]
        keep = (t_next < t_exit) & np.all((cell >= 0) & (cell < n.astype(np.int64)), axis=1)
        ids, cell, t_max, t_delta, step, t_exit = (
            ids[keep], cell[keep], t_max[keep], t_delta[keep], step[keep], t_exit[keep]
        )
        rows = np.arange(len(ids))


def _containing_cell(g, dims):
    cell = np.floor(g).astype(np.int64)
    inside = np.all((cell >= 0) & (cell < np.array(dims)), axis=-1)
    return cell, inside


def traverse_ray(origin, endpoint, spec: GridSpec) -> RayTraversal:
    """Voxels crossed by the segment ``origin -> endpoint``, clipped to the grid."""
    o = check_finite(origin, "origin").reshape(3)
    e = check_finite(endpoint, "endpoint").reshape(3)
    if np.array_equal(o, e):
        raise DegenerateRay("origin and endpoint coincide")
    dims = spec.dims
    g0, g1 = _to_grid(o, spec)[None], _to_grid(e, spec)[None]
    cells = [tuple(int(v) for v in c[0]) for _, c in _dda(g0, g1, dims)]
    hit_cell, inside = _containing_cell(g1[0], dims)
    hit = tuple(int(v) for v in hit_cell) if inside else None
    return RayTraversal([c for c in cells if c != hit], hit)


def point_cloud_labels(points, sensor_origin, spec: GridSpec) -> OccupancyLabelGrid:
    """OCCUPIED where points land, FREE along their rays, UNKNOWN elsewhere."""
    pts = check_finite(points, "points").reshape(-1, 3)
    origin = check_finite(sensor_origin, "sensor origin").reshape(3)
    dims = spec.dims
    labels = np.full(dims, UNKNOWN, dtype=np.int8)
    pts = pts[np.any(pts != origin, axis=1)]
    if len(pts):
        g1 = _to_grid(pts, spec)
        g0 = np.broadcast_to(_to_grid(origin, spec), g1.shape)
        for _, cells in _dda(np.ascontiguousarray(g0), g1, dims):
            labels[cells[:, 0], cells[:, 1], cells[:, 2]] = FREE
        cell, inside = _containing_cell(g1, dims)
        cell = cell[inside]
        labels[cell[:, 0], cell[:, 1], cell[:, 2]] = OCCUPIED
    return OccupancyLabelGrid(labels, spec)


def box_labels(boxes, scale: float, spec: GridSpec) -> OccupancyLabelGrid:
    """OCCUPIED where a voxel center lies in any shrunken box; UNKNOWN elsewhere."""
    dims = spec.dims
    labels = np.full(dims, UNKNOWN, dtype=np.int8)
    centers = None
    for box in boxes:
        small = shrink_box(box, scale)
        corners = _to_grid(small.corners(), spec)
        # centers sit at index + 0.5; the slack keeps boundary centers in range
        lo = np.clip(np.floor(corners.min(axis=0) - 0.5).astype(np.int64) - 1, 0, dims)
        hi = np.clip(np.ceil(corners.max(axis=0) - 0.5).astype(np.int64) + 2, 0, dims)
        if np.any(hi <= lo):
            continue
        if centers is None:
            centers = voxel_centers(spec)
        sl = tuple(slice(a, b) for a, b in zip(lo, hi))
        inside = point_in_box(centers[sl], small)
        labels[sl][inside] = OCCUPIED
    return OccupancyLabelGrid(labels, spec)


def union_labels(*grids: OccupancyLabelGrid) -> OccupancyLabelGrid:
    """Merge label grids with OCCUPIED > FREE > UNKNOWN."""
    if not grids:
        raise ValueError("need at least one label grid")
    spec = grids[0].grid_spec
    for g in grids[1:]:
        if g.grid_spec != spec:
            raise SpecMismatch("label grids are defined over different grid specs")
    return OccupancyLabelGrid(np.maximum.reduce([g.values for g in grids]), spec)
