"""Grayscale slice rendering (binary PGM) and matplotlib report figures."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DimMismatch, SliceOutOfRange

AXES = {"x": 0, "y": 1, "z": 2}
TRI_STATE_LEVELS = {-1.0: 0, 0.0: 128, 1.0: 255}


def is_tri_state(volume) -> bool:
    v = np.asarray(volume)
    return bool(np.all((v == -1) | (v == 0) | (v == 1)))


def take_slice(volume, axis: str, index: int) -> np.ndarray:
    """2-D slice of a rank-3 volume (rank-4 volumes are max-reduced over channels)."""
    v = np.asarray(volume, dtype=np.float64)
    if v.ndim == 4:
        v = v.max(axis=3)
    if v.ndim != 3:
        raise DimMismatch(f"expected a rank 3 or 4 volume, got rank {v.ndim}")
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    a = AXES[axis]
    if not 0 <= index < v.shape[a]:
        raise SliceOutOfRange(f"slice {index} outside [0, {v.shape[a]}) along {axis}")
    return np.take(v, index, axis=a)


def slice_to_gray(plane, tri_state: bool) -> np.ndarray:
    """Map a slice to uint8 image rows; the first slice axis runs left to right,
    the second bottom to top."""
    plane = np.asarray(plane, dtype=np.float64)
    if tri_state:
        gray = np.select([plane < 0, plane == 0], [0, 128], 255)
    else:
        lo, hi = plane.min(), plane.max()
        if hi > lo:
            gray = np.round((plane - lo) / (hi - lo) * 255.0)
        else:
            gray = np.zeros_like(plane)
    return np.ascontiguousarray(gray.astype(np.uint8).T[::-1])


def render_slice(volume, axis: str, index: int) -> np.ndarray:
    return slice_to_gray(take_slice(volume, axis, index), is_tri_state(volume))


def encode_pgm(image) -> bytes:
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    # comment lines are not supported; encode_pgm never writes them
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError("not an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    # exactly one whitespace byte separates the header from the raster
    return np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"font.size": 9, "axes.titlesize": 10, "figure.dpi": 120})
    return plt


def slice_figure(volume, axis: str, index: int, path, title: str | None = None) -> None:
    """Colour-mapped rendering of the same slice, with axis labels and a colour bar."""
    plt = _pyplot()
    plane = take_slice(volume, axis, index)
    names = [n for n in "xyz" if n != axis]
    fig, ax = plt.subplots(figsize=(5, 4))
    tri = is_tri_state(volume)
    # pin tri-state colours to the PGM levels regardless of which labels the slice holds
    style = dict(cmap="gray", vmin=-1, vmax=1) if tri else dict(cmap="viridis")
    im = ax.imshow(plane.T, origin="lower", interpolation="nearest", aspect="auto", **style)
    ax.set_xlabel(f"{names[0]} index")
    ax.set_ylabel(f"{names[1]} index")
    ax.set_title(title or f"{axis} = {index}")
    bar = fig.colorbar(im, ax=ax)
    if tri:
        bar.set_ticks([-1, 0, 1], labels=["unknown", "free", "occupied"])
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)


def ray_profile_figure(pred, target, mask, edges, path, title: str | None = None) -> None:
    """Predicted thickness vs. target along one camera ray; the band exempted
    from supervision is shaded."""
    plt = _pyplot()
    edges = np.asarray(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.step(mids, target, where="mid", color="0.3", label="target")
    ax.plot(mids, pred, marker=".", label="prediction")
    for d in np.flatnonzero(np.asarray(mask) == 0):
        ax.axvspan(edges[d], edges[d + 1], color="tab:orange", alpha=0.2, lw=0)
    ax.set_xlabel("depth (m)")
    ax.set_ylabel("activation")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="upper right", frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)
