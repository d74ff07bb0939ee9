"""Strict readers for KITTI calibration, labels, velodyne scans and depth PNGs."""

from __future__ import annotations

import io
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import CameraCalibration, DepthMap
from .errors import (
    MalformedNumber,
    MissingKey,
    ParseError,
    SingularCalibration,
    TruncatedRecord,
    WrongArity,
    WrongBitDepth,
    WrongChannelCount,
    WrongFieldCount,
)
from .occupancy import OrientedBox3D

CALIB_KEYS = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}
DEPTH_SCALE = 256.0
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _parse_floats(tokens, where):
    try:
        values = [float(t) for t in tokens]
    except ValueError as exc:
        raise MalformedNumber(f"{where}: {exc}") from None
    if not all(math.isfinite(v) for v in values):
        raise MalformedNumber(f"{where}: non-finite value")
    return values


def parse_calib(text: str) -> CameraCalibration:
    """Read the P2, R0_rect and Tr_velo_to_cam entries of a calib file."""
    found = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep:
            raise ParseError(f"line {lineno}: expected 'KEY: values'")
        if key not in CALIB_KEYS:
            continue
        shape = CALIB_KEYS[key]
        values = _parse_floats(rest.split(), f"line {lineno} ({key})")
        if len(values) != shape[0] * shape[1]:
            raise WrongArity(f"{key} needs {shape[0] * shape[1]} values, got {len(values)}")
        found[key] = np.array(values).reshape(shape)
    missing = [k for k in CALIB_KEYS if k not in found]
    if missing:
        raise MissingKey(f"calibration lacks {', '.join(missing)}")
    return CameraCalibration(found["P2"], found["R0_rect"], found["Tr_velo_to_cam"])


def format_calib(calib: CameraCalibration) -> str:
    rows = [("P2", calib.intrinsics), ("R0_rect", calib.rectification), ("Tr_velo_to_cam", calib.lidar_to_camera)]
    return "".join(f"{k}: {' '.join(repr(float(v)) for v in m.ravel())}\n" for k, m in rows)


@dataclass(frozen=True)
class KittiLabelRecord:
    category: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: tuple[float, float, float, float]  # left, top, right, bottom (pixels)
    dims: tuple[float, float, float]  # h, w, l
    location: tuple[float, float, float]  # camera frame, bottom-face center
    rotation_y: float

    @property
    def is_dontcare(self) -> bool:
        return self.category == "DontCare"


def _parse_label_line(line: str, lineno: int) -> KittiLabelRecord:
    fields = line.split()
    if len(fields) != 15:
        raise WrongFieldCount(f"line {lineno}: expected 15 fields, got {len(fields)}")
    nums = _parse_floats(fields[1:], f"line {lineno}")
    if nums[1] != int(nums[1]):
        raise MalformedNumber(f"line {lineno}: occlusion must be an integer")
    rec = KittiLabelRecord(
        category=fields[0],
        truncation=nums[0],
        occlusion=int(nums[1]),
        alpha=nums[2],
        bbox=tuple(nums[3:7]),
        dims=tuple(nums[7:10]),
        location=tuple(nums[10:13]),
        rotation_y=nums[13],
    )
    if not rec.is_dontcare:
        if min(rec.dims) <= 0:
            raise ParseError(f"line {lineno}: dims must be positive")
        if abs(rec.rotation_y) > math.pi + 1e-6:
            raise ParseError(f"line {lineno}: rotation_y outside [-pi, pi]")
    return rec


def parse_labels(text: str) -> list[KittiLabelRecord]:
    return [_parse_label_line(line, i) for i, line in enumerate(text.splitlines(), 1) if line.strip()]


def format_label(rec: KittiLabelRecord) -> str:
    nums = (rec.truncation, rec.occlusion, rec.alpha, *rec.bbox, *rec.dims, *rec.location, rec.rotation_y)
    return " ".join([rec.category] + [f"{v:.2f}" if i != 1 else str(int(v)) for i, v in enumerate(nums)])


def read_velodyne(data: bytes) -> np.ndarray:
    """Packed ``(x, y, z, reflectance)`` float32 records -> ``(N, 3)`` float32 points."""
    if len(data) % 16:
        raise TruncatedRecord(f"{len(data)} bytes is not a whole number of 16-byte records")
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4)[:, :3].astype(np.float32)


def write_velodyne(points, reflectance=None) -> bytes:
    pts = np.asarray(points, dtype="<f4").reshape(-1, 3)
    refl = np.zeros(len(pts), dtype="<f4") if reflectance is None else np.asarray(reflectance, dtype="<f4")
    return np.column_stack([pts, refl]).astype("<f4").tobytes()


def _png_header(data: bytes):
    if data[:8] != _PNG_SIGNATURE or data[12:16] != b"IHDR" or len(data) < 29:
        raise ParseError("not a PNG file")
    width, height, bit_depth, color_type = struct.unpack(">IIBB", data[16:26])
    return width, height, bit_depth, color_type


def read_depth_png(source) -> DepthMap:
    """16-bit single-channel PNG with depth = raw / 256 m; raw 0 marks missing depth."""
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = Path(os.fspath(source)).read_bytes()
    _, _, bit_depth, color_type = _png_header(data)
    if color_type != 0:
        raise WrongChannelCount(f"expected single-channel grayscale, PNG color type is {color_type}")
    if bit_depth != 16:
        raise WrongBitDepth(f"expected 16-bit samples, got {bit_depth}")
    with Image.open(io.BytesIO(data)) as img:
        raw = np.array(img).astype(np.float64)
    return DepthMap(raw.T / DEPTH_SCALE)


def encode_depth_png(depth) -> bytes:
    """Inverse of :func:`read_depth_png` (values rounded to 1/256 m)."""
    vals = np.asarray(getattr(depth, "values", depth), dtype=np.float64)
    raw = np.clip(np.round(vals * DEPTH_SCALE), 0, 65535).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(raw.T)).save(buf, format="PNG")
    return buf.getvalue()


def _yaw_plane(calib: CameraCalibration) -> np.ndarray:
    # maps camera-plane heading components (x, z) to world-plane components (x, y)
    return calib.rect_to_world[:2][:, [0, 2]]


def label_to_world_box(rec: KittiLabelRecord, calib: CameraCalibration) -> OrientedBox3D:
    """Camera-frame bottom-center label -> world-frame geometric-center box."""
    h, w, l = rec.dims
    center_cam = np.array(rec.location) + np.array([0.0, -h / 2.0, 0.0])
    center = calib.camera_to_world(center_cam)
    heading = _yaw_plane(calib) @ np.array([math.cos(rec.rotation_y), -math.sin(rec.rotation_y)])
    yaw = math.atan2(heading[1], heading[0])
    return OrientedBox3D(tuple(center), (h, w, l), yaw)


def world_box_to_camera(box: OrientedBox3D, calib: CameraCalibration):
    """Inverse of :func:`label_to_world_box`: ``(location, dims, rotation_y)``."""
    plane = _yaw_plane(calib)
    if abs(np.linalg.det(plane)) < 1e-12:
        raise SingularCalibration("camera heading plane is perpendicular to the world ground plane")
    a, c = np.linalg.solve(plane, [math.cos(box.yaw), math.sin(box.yaw)])
    rotation_y = math.atan2(-c, a)
    center_cam = calib.world_to_camera(np.array(box.center))
    location = center_cam + np.array([0.0, box.h / 2.0, 0.0])
    return tuple(float(v) for v in location), box.dims, rotation_y
