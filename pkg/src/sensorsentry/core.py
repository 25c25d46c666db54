"""Shared data model: degradation taxonomy, risk weights, regimes, rasters.

Images are ``(H, W, 3)`` uint8 arrays; depth maps, masks and severities are
float64 arrays. Image values are only quantized at the boundary of an
operator call or at file I/O.
"""

from __future__ import annotations

import configparser
import enum
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

NUM_MODES = 12


class DataError(Exception):
    """Malformed or inconsistent input data."""


class Group(enum.Enum):
    WEATHER = "weather"
    ILLUMINATION = "illumination"
    OPTICAL = "optical"
    MOTION = "motion"
    SENSOR_PIPELINE = "sensor_pipeline"
    OCCLUSION = "occlusion"


class Mode(enum.IntEnum):
    """The twelve degradation modes. Ids follow the risk-table row order."""

    FOG = 0
    RAIN = 1
    SNOW = 2
    LOW_LIGHT = 3
    MOTION_BLUR = 4
    DEFOCUS_BLUR = 5
    GLARE = 6
    VIGNETTING = 7
    SENSOR_NOISE = 8
    EXPOSURE_SHIFT = 9
    JPEG_COMPRESSION = 10
    LENS_OCCLUSION = 11

    @property
    def group(self) -> Group:
        return MODE_GROUP[self]

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "Mode":
        """Accept ``fog``, ``FOG``, ``Fog``, ``lens_occlusion``, ``LensOcclusion``
        or a short alias like ``noise``/``jpeg``/``occlusion``."""
        t = text.strip()
        if t.isdigit():
            return cls(int(t))
        norm = t.replace("-", "").replace("_", "").replace(" ", "").lower()
        for m in cls:
            if m.name.replace("_", "").lower() == norm:
                return m
        if norm in _ALIASES:
            return _ALIASES[norm]
        raise ValueError(f"unknown degradation mode {text!r}")


MODE_GROUP = {
    Mode.FOG: Group.WEATHER,
    Mode.RAIN: Group.WEATHER,
    Mode.SNOW: Group.WEATHER,
    Mode.LOW_LIGHT: Group.ILLUMINATION,
    Mode.EXPOSURE_SHIFT: Group.ILLUMINATION,
    Mode.DEFOCUS_BLUR: Group.OPTICAL,
    Mode.GLARE: Group.OPTICAL,
    Mode.VIGNETTING: Group.OPTICAL,
    Mode.MOTION_BLUR: Group.MOTION,
    Mode.SENSOR_NOISE: Group.SENSOR_PIPELINE,
    Mode.JPEG_COMPRESSION: Group.SENSOR_PIPELINE,
    Mode.LENS_OCCLUSION: Group.OCCLUSION,
}

_ALIASES = {
    "haze": Mode.FOG,
    "lowlight": Mode.LOW_LIGHT,
    "dark": Mode.LOW_LIGHT,
    "motion": Mode.MOTION_BLUR,
    "defocus": Mode.DEFOCUS_BLUR,
    "blur": Mode.DEFOCUS_BLUR,
    "flare": Mode.GLARE,
    "vignette": Mode.VIGNETTING,
    "noise": Mode.SENSOR_NOISE,
    "exposure": Mode.EXPOSURE_SHIFT,
    "jpeg": Mode.JPEG_COMPRESSION,
    "compression": Mode.JPEG_COMPRESSION,
    "occlusion": Mode.LENS_OCCLUSION,
}


class Regime(enum.IntEnum):
    """Operating regime; larger is healthier."""

    CRITICAL = 0
    DEGRADED = 1
    HEALTHY = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


HEALTHY_MIN = 0.9
DEGRADED_MIN = 0.6


def classify_regime(h: float) -> Regime:
    h = health_score(h)
    if h >= HEALTHY_MIN:
        return Regime.HEALTHY
    if h >= DEGRADED_MIN:
        return Regime.DEGRADED
    return Regime.CRITICAL


def health_score(h: float) -> float:
    """Validate a health value, clamping out-of-range inputs into [0, 1]."""
    h = float(h)
    if math.isnan(h):
        raise ValueError("health score is NaN")
    if h < 0.0 or h > 1.0:
        log.warning("clamping health score %r into [0, 1]", h)
        h = min(1.0, max(0.0, h))
    return h


def severity_vector(values: Sequence[float] | Mapping[Mode, float] | np.ndarray) -> np.ndarray:
    """Build a validated length-12 float64 severity vector."""
    if isinstance(values, Mapping):
        out = np.zeros(NUM_MODES)
        for m, v in values.items():
            out[Mode.parse(m) if isinstance(m, str) else Mode(m)] = v
    else:
        out = np.array(values, dtype=np.float64).reshape(-1)
    if out.shape != (NUM_MODES,):
        raise ValueError(f"severity vector needs {NUM_MODES} entries, got {out.shape}")
    if np.isnan(out).any():
        raise ValueError("severity vector contains NaN")
    if (out < 0).any() or (out > 1).any():
        raise ValueError("severities must lie in [0, 1]")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class RiskWeightTable:
    """Per-mode base weights and per-group scale exponents.

    ``scale_override`` gives a per-mode group scale that replaces the group
    value; the default table needs it for exposure shift, which is scaled like
    the sensor/pipeline group although it belongs to illumination.
    """

    base_weight: Mapping[Mode, float]
    group_scale: Mapping[Group, float]
    scale_override: Mapping[Mode, float] = field(default_factory=dict)

    def __post_init__(self):
        bw = {Mode(m): float(v) for m, v in self.base_weight.items()}
        gs = {Group(g): float(v) for g, v in self.group_scale.items()}
        so = {Mode(m): float(v) for m, v in self.scale_override.items()}
        missing = [m.key for m in Mode if m not in bw]
        if missing:
            raise ValueError(f"risk table missing modes: {missing}")
        missing = [g.value for g in {m.group for m in Mode} if g not in gs]
        if missing:
            raise ValueError(f"risk table missing groups: {missing}")
        for v in [*bw.values(), *gs.values(), *so.values()]:
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"risk weights must be positive and finite, got {v}")
        object.__setattr__(self, "base_weight", MappingProxyType(bw))
        object.__setattr__(self, "group_scale", MappingProxyType(gs))
        object.__setattr__(self, "scale_override", MappingProxyType(so))

    def scale(self, mode: Mode) -> float:
        if mode in self.scale_override:
            return self.scale_override[mode]
        return self.group_scale[mode.group]

    def exponent(self, mode: Mode) -> float:
        return self.base_weight[mode] * self.scale(mode)

    def exponents(self) -> np.ndarray:
        return np.array([self.exponent(m) for m in Mode])

    def rows(self) -> list[tuple[Mode, float, float, float]]:
        return [(m, self.base_weight[m], self.scale(m), self.exponent(m)) for m in Mode]

    def to_config(self) -> str:
        cp = configparser.ConfigParser()
        cp["modes"] = {m.key: repr(self.base_weight[m]) for m in Mode}
        cp["groups"] = {g.value: repr(v) for g, v in self.group_scale.items()}
        cp["overrides"] = {m.key: repr(v) for m, v in self.scale_override.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_config(cls, text: str) -> "RiskWeightTable":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
            base = {Mode.parse(k): float(v) for k, v in cp["modes"].items()}
            groups = {Group(k): float(v) for k, v in cp["groups"].items()}
            over = {}
            if cp.has_section("overrides"):
                over = {Mode.parse(k): float(v) for k, v in cp["overrides"].items()}
            return cls(base, groups, over)
        except (configparser.Error, KeyError, ValueError) as exc:
            raise DataError(f"bad risk table config: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_config())

    @classmethod
    def load(cls, path: str | Path) -> "RiskWeightTable":
        return cls.from_config(Path(path).read_text())


def default_risk_table() -> RiskWeightTable:
    base = {
        Mode.FOG: 1.30,
        Mode.RAIN: 1.10,
        Mode.SNOW: 1.20,
        Mode.LOW_LIGHT: 1.30,
        Mode.MOTION_BLUR: 1.40,
        Mode.DEFOCUS_BLUR: 1.40,
        Mode.GLARE: 1.50,
        Mode.VIGNETTING: 0.70,
        Mode.SENSOR_NOISE: 1.10,
        Mode.EXPOSURE_SHIFT: 1.00,
        Mode.JPEG_COMPRESSION: 0.80,
        Mode.LENS_OCCLUSION: 1.60,
    }
    groups = {
        Group.WEATHER: 1.00,
        Group.ILLUMINATION: 1.00,
        Group.OPTICAL: 1.10,
        Group.MOTION: 1.10,
        Group.SENSOR_PIPELINE: 0.95,
        Group.OCCLUSION: 1.15,
    }
    return RiskWeightTable(base, groups, {Mode.EXPOSURE_SHIFT: 0.95})


# Effective exponents as printed in the published table, used as a cross-check.
PUBLISHED_EXPONENTS = {
    Mode.FOG: 1.30,
    Mode.RAIN: 1.10,
    Mode.SNOW: 1.20,
    Mode.LOW_LIGHT: 1.30,
    Mode.MOTION_BLUR: 1.54,
    Mode.DEFOCUS_BLUR: 1.54,
    Mode.GLARE: 1.65,
    Mode.VIGNETTING: 0.77,
    Mode.SENSOR_NOISE: 1.05,
    Mode.EXPOSURE_SHIFT: 0.95,
    Mode.JPEG_COMPRESSION: 0.76,
    Mode.LENS_OCCLUSION: 1.84,
}


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel rectangle ``[x_min, x_max) x [y_min, y_max)``."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def validate(self, width: int, height: int) -> None:
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(f"degenerate detection box {self}")
        if self.x_min < 0 or self.y_min < 0 or self.x_max > width or self.y_max > height:
            raise ValueError(f"detection box {self} outside {width}x{height} image")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


# -- raster helpers -----------------------------------------------------------


def as_image(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) image, got shape {a.shape}")
    if a.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {a.dtype}")
    return a


def as_unit_map(values, shape: tuple[int, int] | None = None, what: str = "map") -> np.ndarray:
    """Validate a 2-D float map with values in [0, 1]."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{what} must be 2-D, got shape {a.shape}")
    if shape is not None and a.shape != tuple(shape):
        raise DataError(f"{what} shape {a.shape} does not match image {tuple(shape)}")
    if np.isnan(a).any() or (a < 0).any() or (a > 1).any():
        raise ValueError(f"{what} values must lie in [0, 1]")
    return a


def quantize(x: np.ndarray) -> np.ndarray:
    """Clip to [0, 255] and round half-to-even to uint8."""
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def read_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def write_image(path: str | Path, img: np.ndarray) -> None:
    """Write PNG or binary PPM (P6) depending on the suffix."""
    img = as_image(img)
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pnm") else "PNG"
    Image.fromarray(img, "RGB").save(path, format=fmt)


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    mode = "L" if img.ndim == 2 else "RGB"
    Image.fromarray(img, mode).save(buf, format="PNG")
    return buf.getvalue()


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    """8-bit grayscale PNG, value / 255."""
    Path(path).write_bytes(encode_png(quantize(as_unit_map(mask) * 255.0)))


def read_mask(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im.convert("L"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc


def _read_ascii_pgm(path: Path) -> np.ndarray:
    tokens = []
    for line in path.read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise DataError(f"{path} is not an ASCII PGM (P2)")
    w, h, maxval = (int(t) for t in tokens[1:4])
    vals = np.array(tokens[4 : 4 + w * h], dtype=np.float64)
    if vals.size != w * h or maxval <= 0:
        raise DataError(f"truncated PGM {path}")
    return vals.reshape(h, w) / maxval


def read_depth(path: str | Path) -> np.ndarray:
    """Read a normalized depth map from 16-bit PNG or ASCII PGM."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        with open(path, "rb") as fh:
            magic = fh.read(2)
        if magic == b"P2":
            return _read_ascii_pgm(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                return np.clip(np.array(im, dtype=np.float64) / 65535.0, 0.0, 1.0)
            return np.array(im.convert("L"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read depth {path}: {exc}") from exc


def write_depth(path: str | Path, depth: np.ndarray) -> None:
    """16-bit grayscale PNG, or ASCII PGM when the suffix is ``.pgm``."""
    depth = as_unit_map(depth, what="depth")
    path = Path(path)
    q = np.rint(depth * 65535.0).astype(np.uint16)
    if path.suffix.lower() == ".pgm":
        h, w = q.shape
        rows = "\n".join(" ".join(str(v) for v in r) for r in q)
        path.write_text(f"P2\n{w} {h}\n65535\n{rows}\n")
    else:
        Image.fromarray(q).save(path, format="PNG")
