"""Flat ``key=value`` pipeline configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .core import BinSpec, GridSpec
from .errors import ConfigError, DTFError


@dataclass(frozen=True)
class PipelineConfig:
    d_min: float = 2.0
    d_max: float = 46.8
    num_bins: int = 80
    x_min: float = 2.0
    x_max: float = 46.8
    y_min: float = -30.08
    y_max: float = 30.08
    z_min: float = -3.0
    z_max: float = 1.0
    voxel_size: float = 0.16
    # no sensible default exists for the band half-width; commands that need it insist
    extension_radius: int | None = None
    alpha: float = 0.25
    gamma: float = 2.0
    shrink_scale: float = 0.8
    feature_stride: int = 4
    downsample: str = "nearest"
    threshold: float = 0.5
    interpolation: str = "trilinear"
    categories: str = "Car"
    threads: int = 1

    def __post_init__(self):
        try:
            self.bin_spec
            self.grid_spec
        except DTFError as exc:
            raise ConfigError(str(exc)) from None
        if self.extension_radius is not None and self.extension_radius < 0:
            raise ConfigError("extension_radius must be non-negative")
        if not 0 < self.alpha < 1 or self.gamma < 0:
            raise ConfigError("need 0 < alpha < 1 and gamma >= 0")
        if not 0 < self.shrink_scale <= 1:
            raise ConfigError("shrink_scale must be in (0, 1]")
        if self.feature_stride < 1:
            raise ConfigError("feature_stride must be positive")
        if self.downsample not in ("nearest", "min"):
            raise ConfigError("downsample must be 'nearest' or 'min'")
        if self.interpolation not in ("trilinear", "nearest"):
            raise ConfigError("interpolation must be 'trilinear' or 'nearest'")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must be in (0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be positive")

    @property
    def bin_spec(self) -> BinSpec:
        return BinSpec(self.d_min, self.d_max, self.num_bins)

    @property
    def grid_spec(self) -> GridSpec:
        return GridSpec((self.x_min, self.x_max), (self.y_min, self.y_max), (self.z_min, self.z_max), self.voxel_size)

    def require_radius(self) -> int:
        if self.extension_radius is None:
            raise ConfigError("extension_radius must be set for this command")
        return self.extension_radius

    def with_overrides(self, pairs: dict) -> "PipelineConfig":
        fields = {f.name: f for f in dataclasses.fields(self)}
        updates = {}
        for key, raw in pairs.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            updates[key] = _coerce(key, raw, fields[key].default)
        return dataclasses.replace(self, **updates)

    def to_text(self) -> str:
        return "".join(
            f"{f.name}={'' if getattr(self, f.name) is None else getattr(self, f.name)}\n"
            for f in dataclasses.fields(self)
        )

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        return cls().with_overrides(parse_pairs(text.splitlines()))

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text())


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if key == "extension_radius":
        if raw == "":
            return None
        kind = int
    else:
        kind = type(default)
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_pairs(lines) -> dict:
    pairs = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        pairs[key.strip()] = value.strip()
    return pairs
