"""Linear-increasing depth discretization (LID).

Bin ``i`` has width ``delta * (i + 1)`` with
``delta = 2 (d_max - d_min) / (D (D + 1))``, so edges sit at
``d_min + delta * i (i + 1) / 2`` and the continuous bin coordinate of a
depth is the positive root of that quadratic.
"""

from __future__ import annotations

import numpy as np

from .core import BinSpec
from .errors import OutOfRange


def lid_edges(spec: BinSpec) -> np.ndarray:
    """The ``num_bins + 1`` strictly increasing bin edges in meters."""
    i = np.arange(spec.num_bins + 1, dtype=np.float64)
    edges = spec.d_min + spec.bin_size * i * (i + 1) / 2.0
    edges[-1] = spec.d_max
    return edges


def lid_continuous(z, spec: BinSpec, return_flag: bool = False):
    """Continuous bin coordinate in ``[0, D]`` for metric depth ``z``.

    Depths outside ``[d_min, d_max]`` are clamped; with ``return_flag`` the
    out-of-range mask is returned alongside.
    """
    z = np.asarray(z, dtype=np.float64)
    out_of_range = (z < spec.d_min) | (z > spec.d_max)
    zc = np.clip(z, spec.d_min, spec.d_max)
    zp = -0.5 + 0.5 * np.sqrt(1.0 + 8.0 * (zc - spec.d_min) / spec.bin_size)
    zp = np.clip(zp, 0.0, float(spec.num_bins))
    if zp.ndim == 0:
        zp, out_of_range = float(zp), bool(out_of_range)
    return (zp, out_of_range) if return_flag else zp


def lid_index(z, spec: BinSpec, return_flag: bool = False):
    """Integer bin in ``[0, D - 1]`` containing ``z`` (clamped at both ends)."""
    zp, flag = lid_continuous(z, spec, return_flag=True)
    edges = lid_edges(spec)
    zc = np.clip(np.asarray(z, dtype=np.float64), spec.d_min, spec.d_max)
    idx = np.clip(np.floor(zp).astype(np.int64), 0, spec.num_bins - 1)
    # the closed form can land one bin off right at an edge; settle it against the edges
    idx = np.where(zc < edges[idx], idx - 1, idx)
    idx = np.where((idx < spec.num_bins - 1) & (zc >= edges[np.minimum(idx + 1, spec.num_bins)]), idx + 1, idx)
    idx = np.clip(idx, 0, spec.num_bins - 1)
    if idx.ndim == 0:
        idx = int(idx)
    return (idx, flag) if return_flag else idx


def lid_depth_of(zp, spec: BinSpec):
    """Metric depth at continuous bin coordinate ``zp`` in ``[0, D]``."""
    zp_arr = np.asarray(zp, dtype=np.float64)
    if np.any(~np.isfinite(zp_arr)) or np.any(zp_arr < 0) or np.any(zp_arr > spec.num_bins):
        raise OutOfRange(f"bin coordinate outside [0, {spec.num_bins}]")
    z = spec.d_min + spec.bin_size * zp_arr * (zp_arr + 1.0) / 2.0
    z = np.where(zp_arr == spec.num_bins, spec.d_max, z)
    return float(z) if z.ndim == 0 else z
