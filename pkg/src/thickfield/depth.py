"""Per-pixel depth representations, soft-extended targets and the thickness loss.

Volumes are ``(W, H, D)`` float arrays indexed ``[u, v, bin]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binning import lid_edges, lid_index
from .core import BinSpec, DepthMap, check_finite
from .errors import DimMismatch, NonFiniteInput, RangeError

LOG_EPS = 1e-6


def _readonly(arr, dtype=np.float64):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _as_values(vol) -> np.ndarray:
    return np.asarray(getattr(vol, "values", vol))


@dataclass(frozen=True)
class OneHotVolume:
    values: np.ndarray  # (W, H, D) in {0, 1}
    valid: np.ndarray  # (W, H) bool

    def __post_init__(self):
        vals = _readonly(self.values)
        valid = _readonly(self.valid, dtype=bool)
        if vals.ndim != 3 or valid.shape != vals.shape[:2]:
            raise DimMismatch(f"one-hot {vals.shape} vs validity {valid.shape}")
        if not np.all((vals == 0) | (vals == 1)):
            raise RangeError("one-hot entries must be 0 or 1")
        sums = vals.sum(axis=-1)
        if np.any(sums[valid] != 1) or np.any(sums[~valid] != 0):
            raise RangeError("valid pixels need exactly one 1, invalid pixels none")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", valid)

    @property
    def bins(self) -> np.ndarray:
        """Bin index per pixel, -1 where invalid."""
        return np.where(self.valid, self.values.argmax(axis=-1), -1)


@dataclass(frozen=True)
class DistributionVolume:
    values: np.ndarray

    def __post_init__(self):
        vals = _readonly(self.values)
        if vals.ndim != 3:
            raise DimMismatch(f"distribution volume must be 3-D, got {vals.shape}")
        check_finite(vals, "distribution")
        if np.any(vals < 0) or np.any(np.abs(vals.sum(axis=-1) - 1.0) >= 1e-5):
            raise RangeError("each pixel must hold non-negative weights summing to 1")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class ThicknessField:
    """Independent per-bin activations in [0, 1]; no per-pixel sum constraint."""

    values: np.ndarray

    def __post_init__(self):
        vals = _readonly(self.values)
        if vals.ndim != 3:
            raise DimMismatch(f"thickness field must be 3-D, got {vals.shape}")
        check_finite(vals, "thickness field")
        if np.any(vals < 0) or np.any(vals > 1):
            raise RangeError("thickness values must lie in [0, 1]")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class ExtensionMask:
    values: np.ndarray  # (W, H, D) in {0, 1}
    radius: int

    def __post_init__(self):
        vals = _readonly(self.values)
        if vals.ndim != 3 or not np.all((vals == 0) | (vals == 1)):
            raise RangeError("extension mask must be a binary 3-D volume")
        object.__setattr__(self, "values", vals)


def encode_one_hot(depth: DepthMap, spec: BinSpec, shape=None) -> OneHotVolume:
    """One-hot LID encoding of a depth map already at feature resolution."""
    if shape is not None and tuple(shape) != depth.values.shape:
        raise DimMismatch(f"depth map {depth.values.shape} does not match feature plane {tuple(shape)}")
    valid = depth.valid
    bins = lid_index(np.where(valid, depth.values, spec.d_min), spec)
    vals = np.zeros(depth.values.shape + (spec.num_bins,))
    u, v = np.nonzero(valid)
    vals[u, v, bins[u, v]] = 1.0
    return OneHotVolume(vals, valid)


def normalize_distribution(logits) -> DistributionVolume:
    """Per-pixel softmax over the bin axis."""
    x = check_finite(logits, "logits")
    if x.ndim != 3:
        raise DimMismatch(f"logits must be 3-D, got {x.shape}")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return DistributionVolume(e / e.sum(axis=-1, keepdims=True))


def extension_mask(one_hot: OneHotVolume, radius: int) -> ExtensionMask:
    """Zero out the ``radius`` bins on each side of every valid pixel's depth bin."""
    radius = int(radius)
    if radius < 0:
        raise ValueError("extension radius must be non-negative")
    n_bins = one_hot.values.shape[-1]
    d = np.arange(n_bins)
    offset = np.abs(d - one_hot.bins[..., None])
    band = (offset > 0) & (offset <= radius) & one_hot.valid[..., None]
    return ExtensionMask(np.where(band, 0.0, 1.0), radius)


def soft_extended_target(one_hot: OneHotVolume, mask: ExtensionMask) -> np.ndarray:
    a, m = _as_values(one_hot), _as_values(mask)
    if a.shape != m.shape:
        raise DimMismatch(f"target {a.shape} and mask {m.shape} differ")
    return a * m


def _mod_grad(base, gamma, log_term):
    # d/dx of base**gamma is gamma*base**(gamma-1); the product with the log
    # factor tends to 0 when base -> 0, so pin it there instead of inf * 0
    if gamma == 0:
        return np.zeros_like(base)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = gamma * np.power(base, gamma - 1.0) * log_term
    return np.where(base > 0, g, 0.0)


def thickness_focal_loss(pred, target, mask, alpha: float = 0.25, gamma: float = 2.0, valid=None):
    """Masked binary focal loss, averaged over pixels, and its exact gradient.

    Bins where ``mask`` is 0 (and pixels where ``valid`` is False) contribute
    neither loss nor gradient. Log arguments are floored at ``LOG_EPS``.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``pred``.
    """
    p = np.asarray(_as_values(pred), dtype=np.float64)
    t = np.asarray(_as_values(target), dtype=np.float64)
    m = np.asarray(_as_values(mask), dtype=np.float64)
    if p.ndim != 3 or p.shape != t.shape or p.shape != m.shape:
        raise DimMismatch(f"pred {p.shape}, target {t.shape}, mask {m.shape} must match")
    for arr, name in ((p, "pred"), (t, "target"), (m, "mask")):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput(f"{name} contains non-finite values")
    if np.any(p < 0) or np.any(p > 1):
        raise RangeError("pred must lie in [0, 1]")
    if not (0 < alpha < 1) or gamma < 0:
        raise ValueError(f"need alpha in (0, 1) and gamma >= 0, got {alpha}, {gamma}")
    active = m != 0
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != p.shape[:2]:
            raise DimMismatch(f"validity {valid.shape} does not match pred {p.shape[:2]}")
        active &= valid[..., None]

    q = 1.0 - p
    p_floor, q_floor = np.maximum(p, LOG_EPS), np.maximum(q, LOG_EPS)
    log_p, log_q = np.log(p_floor), np.log(q_floor)
    pos = -alpha * np.power(q, gamma) * log_p
    neg = -(1.0 - alpha) * np.power(p, gamma) * log_q
    term = t * pos + (1.0 - t) * neg

    dpos = alpha * _mod_grad(q, gamma, log_p) - alpha * np.power(q, gamma) * np.where(p > LOG_EPS, 1.0 / p_floor, 0.0)
    dneg = -(1.0 - alpha) * _mod_grad(p, gamma, log_q) + (1.0 - alpha) * np.power(p, gamma) * np.where(
        q > LOG_EPS, 1.0 / q_floor, 0.0
    )
    dterm = t * dpos + (1.0 - t) * dneg

    n_pixels = p.shape[0] * p.shape[1]
    loss = float(np.sum(np.where(active, term, 0.0)) / n_pixels)
    grad = np.where(active, dterm, 0.0) / n_pixels
    return loss, grad


def thickness_profile(ray, tau: float, spec: BinSpec):
    """Maximal runs of bins with activation >= ``tau`` along one camera ray.

    Returns a list of ``(start_bin, bin_count, start_depth, end_depth)``.
    """
    if not 0 < tau < 1:
        raise ValueError("threshold must lie in (0, 1)")
    r = check_finite(ray, "ray")
    if r.shape != (spec.num_bins,):
        raise DimMismatch(f"ray has {r.shape} entries, spec has {spec.num_bins} bins")
    edges = lid_edges(spec)
    on = np.concatenate([[False], r >= tau, [False]])
    changes = np.flatnonzero(on[1:] != on[:-1])
    runs = []
    for start, stop in zip(changes[::2], changes[1::2]):
        runs.append((int(start), int(stop - start), float(edges[start]), float(edges[stop])))
    return runs


def compose_total_loss(l_org: float, l_occ: float, l_thickness: float) -> float:
    """Unit-weight sum of the detection, occupancy and thickness losses."""
    terms = [float(l_org), float(l_occ), float(l_thickness)]
    if not all(np.isfinite(terms)):
        raise NonFiniteInput("loss terms must be finite")
    if any(x < 0 for x in terms):
        raise RangeError("loss terms must be non-negative")
    return terms[0] + terms[1] + terms[2]
