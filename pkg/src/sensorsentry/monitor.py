"""Training-free camera-health monitor built from classical image statistics.

Each mode gets one raw statistic oriented so that larger means more degraded.
A calibration table maps every statistic through a monotone piecewise-linear
transfer (an isotonic fit against known synthetic severities) to [0, 1]. The
monitor sees only the RGB image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import cv2
import numpy as np
from scipy import ndimage
from sklearn.isotonic import IsotonicRegression

from .core import (
    NUM_MODES,
    Mode,
    RiskWeightTable,
    as_image,
    default_risk_table,
    severity_vector,
)
from .gshi import compute_gshi
from .labelgen import DEFAULT_GRID
from .rng import image_stream
from .synthesis import DEFAULT_PHYSICS, DegradationParams, PhysicsConfig, apply, radial_field

PRESENCE_THRESHOLD = 0.1
TILE = 16
MIN_CALIBRATION_IMAGES = 10
TABLE_VERSION = 1
COLLAPSE_RATIO = 0.4
COLLAPSE_PERCENTILE = 30
HAZE_DARK = 0.7
NEAR_BAND = 0.92  # rows below this fraction of the height count as near field


class CalibrationError(Exception):
    """Calibration missing, malformed or impossible to fit."""


def luminance(img: np.ndarray) -> np.ndarray:
    x = img.astype(np.float64)
    return 0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]


def _tophats(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """White top-hats with a horizontal and a vertical line element."""
    th_h = gray - ndimage.grey_opening(gray, size=(1, 7))
    th_v = gray - ndimage.grey_opening(gray, size=(7, 1))
    return th_h, th_v


@dataclass(frozen=True)
class Features:
    """Raw per-mode statistics plus the dense maps the uncertainty head reuses."""

    stats: np.ndarray
    maps: Mapping[Mode, np.ndarray]


def extract(img: np.ndarray) -> Features:
    img = as_image(img)
    x = img.astype(np.float64)
    gray = luminance(img)
    h, w = gray.shape
    stats = np.zeros(NUM_MODES)
    maps: dict[Mode, np.ndarray] = {}

    dark = ndimage.minimum_filter(x.min(axis=2), size=7) / 255.0
    lo, hi = np.percentile(gray, [5, 95])
    stats[Mode.FOG] = dark.mean() + 0.5 * (1.0 - (hi - lo) / 255.0)
    maps[Mode.FOG] = dark

    th_h, th_v = _tophats(gray)
    streak = np.maximum(th_h - th_v, 0.0)
    speck = np.minimum(th_h, th_v)
    stats[Mode.RAIN] = streak.mean() / 255.0
    stats[Mode.SNOW] = (speck > 25).mean() + (gray > 235).mean() * 0.5
    maps[Mode.RAIN] = ndimage.uniform_filter(streak, 9) / 64.0
    maps[Mode.SNOW] = ndimage.uniform_filter((speck > 25).astype(float), 9)

    mean_lum = gray.mean() / 255.0
    stats[Mode.LOW_LIGHT] = 1.0 - mean_lum
    stats[Mode.EXPOSURE_SHIFT] = abs(mean_lum - 0.5) * 2.0

    gy = ndimage.sobel(gray, axis=0)
    gx = ndimage.sobel(gray, axis=1)
    jxx, jyy, jxy = (gx * gx).sum(), (gy * gy).sum(), (gx * gy).sum()
    tr = jxx + jyy
    aniso = math.sqrt((jxx - jyy) ** 2 + 4 * jxy**2) / tr if tr > 0 else 0.0
    contrast = max(hi - lo, 8.0) / 128.0
    band = ndimage.gaussian_filter(gray, 0.8) - ndimage.gaussian_filter(gray, 2.5)
    blur = -math.log10(np.abs(band).mean() / contrast + 1e-3)
    # defocus grows with proximity, so the bottom rows (nearest ground) blur first
    lap = np.abs(ndimage.laplace(ndimage.gaussian_filter(gray, 0.5)))
    stats[Mode.DEFOCUS_BLUR] = -math.log(np.median(lap[int(NEAR_BAND * h) :]) + 0.5)
    stats[Mode.MOTION_BLUR] = aniso + blur
    hf = ndimage.uniform_filter(np.abs(band), 8) / contrast
    maps[Mode.DEFOCUS_BLUR] = np.clip(1.0 - hf / (np.percentile(hf, 90) + 1e-6), 0.0, 1.0)

    bright = (gray >= 245).astype(float)
    stats[Mode.GLARE] = bright.mean() + np.clip(gray - 200, 0, None).mean() / 55.0
    maps[Mode.GLARE] = np.clip(ndimage.uniform_filter(np.clip(gray - 180, 0, None) / 75.0, 9), 0, 1)

    rr = radial_field(h, w)
    yy, xx = np.mgrid[0:h, 0:w]
    design = np.stack([np.ones(rr.size), yy.ravel() / h, xx.ravel() / w, rr.ravel()], 1)
    coef, *_ = np.linalg.lstsq(design, np.log(gray + 8.0).ravel(), rcond=None)
    stats[Mode.VIGNETTING] = -coef[3]
    maps[Mode.VIGNETTING] = rr

    # texture far below the frame's low-texture level; a global blur lowers both
    # sides and a low percentile shrugs off bright speckle. Haze also flattens
    # texture but leaves it bright, so bright flat regions are not counted.
    collapse = ((hf < COLLAPSE_RATIO * np.percentile(hf, COLLAPSE_PERCENTILE)) & (dark < HAZE_DARK)).astype(float)
    stats[Mode.LENS_OCCLUSION] = collapse.mean()
    maps[Mode.LENS_OCCLUSION] = ndimage.uniform_filter(collapse, 9)

    med = cv2.medianBlur(img, 3).astype(np.float64)
    stats[Mode.SENSOR_NOISE] = np.abs(x - med).mean()

    stats[Mode.JPEG_COMPRESSION] = _blockiness(gray)
    return Features(stats, maps)


def _blockiness(gray: np.ndarray) -> float:
    """Luminance jumps on 8x8 block borders relative to the other grid phases."""
    scores = []
    for d in (np.abs(np.diff(gray, axis=1)), np.abs(np.diff(gray, axis=0)).T):
        n = d.shape[1]
        if n < 16:
            continue
        col = np.median(d, axis=0)
        # median per phase so one long edge (a horizon, a pole) cannot dominate
        phase = np.array([np.median(col[np.arange(n) % 8 == k]) for k in range(8)])
        scores.append(phase[7] / (np.median(phase[:7]) + 0.5))
    return float(np.mean(scores)) if scores else 0.0


# -- calibration -----------------------------------------------------------------------


@dataclass(frozen=True)
class Transfer:
    """Non-decreasing piecewise-linear map from statistic to severity."""

    xs: tuple[float, ...]
    ys: tuple[float, ...]
    offset: float = 0.0

    def __call__(self, stat: float) -> float:
        v = stat - self.offset
        if not self.xs:
            return 0.0
        return float(np.clip(np.interp(v, self.xs, self.ys), 0.0, 1.0))


@dataclass(frozen=True)
class CalibrationTable:
    transfers: Mapping[Mode, Transfer]
    seed: int = 0

    def __post_init__(self):
        missing = [m.key for m in Mode if m not in self.transfers]
        if missing:
            raise CalibrationError(f"calibration table lacks modes: {missing}")

    def to_text(self) -> str:
        lines = [f"sensorsentry-calibration v{TABLE_VERSION}", f"seed {self.seed}"]
        for m in Mode:
            t = self.transfers[m]
            pts = " ".join(f"{x!r}:{y!r}" for x, y in zip(t.xs, t.ys))
            lines.append(f"{m.key} offset={t.offset!r} {pts}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CalibrationTable":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("sensorsentry-calibration v"):
            raise CalibrationError("not a calibration table")
        if int(lines[0].rsplit("v", 1)[1]) != TABLE_VERSION:
            raise CalibrationError(f"unsupported calibration version in {lines[0]!r}")
        seed = int(lines[1].split()[1])
        transfers = {}
        try:
            for ln in lines[2:]:
                parts = ln.split()
                mode = Mode.parse(parts[0])
                offset = float(parts[1].split("=", 1)[1])
                pts = [tuple(map(float, p.split(":"))) for p in parts[2:]]
                transfers[mode] = Transfer(tuple(p[0] for p in pts), tuple(p[1] for p in pts), offset)
        except (IndexError, ValueError) as exc:
            raise CalibrationError(f"malformed calibration line: {exc}") from exc
        return cls(transfers, seed)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationTable":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise CalibrationError(f"cannot read calibration {path}: {exc}") from exc


def fit_transfer(stats: Sequence[float], severities: Sequence[float], clean_stats: Sequence[float]) -> Transfer:
    """Isotonic fit of severity on statistic, anchored at zero for clean inputs.

    The offset is the largest clean statistic, so every clean calibration
    image maps to severity 0.
    """
    stats = np.asarray(stats, dtype=np.float64)
    sev = np.asarray(severities, dtype=np.float64)
    offset = float(np.max(clean_stats)) if len(clean_stats) else 0.0
    v = stats - offset
    keep = v > 0
    if not keep.any():
        return Transfer((0.0, 1.0), (0.0, 0.0), offset)
    iso = IsotonicRegression(y_min=0.0, y_max=1.0, increasing=True, out_of_bounds="clip")
    iso.fit(np.r_[0.0, v[keep]], np.r_[0.0, sev[keep]])
    xs = np.r_[0.0, iso.X_thresholds_[iso.X_thresholds_ > 0]]
    ys = np.r_[0.0, iso.y_thresholds_[iso.X_thresholds_ > 0]]
    ys = np.maximum.accumulate(ys)
    return Transfer(tuple(map(float, xs)), tuple(map(float, ys)), offset)


def calibrate(
    clean_images: Sequence[np.ndarray],
    depths: Sequence[np.ndarray | None],
    seed: int = 0,
    grid: Sequence[float] = DEFAULT_GRID,
    physics: PhysicsConfig = DEFAULT_PHYSICS,
    synth: Callable = apply,
) -> CalibrationTable:
    """Fit one transfer per mode from severity sweeps over clean images."""
    if len(clean_images) < MIN_CALIBRATION_IMAGES:
        raise CalibrationError(f"need >= {MIN_CALIBRATION_IMAGES} clean images, got {len(clean_images)}")
    if len(depths) != len(clean_images):
        raise CalibrationError("every calibration image needs a depth map")
    clean = np.array([extract(im).stats for im in clean_images])
    transfers = {}
    for m in Mode:
        xs, ys = [], []
        for k, (img, depth) in enumerate(zip(clean_images, depths)):
            stream = image_stream(seed, k)
            for s in grid:
                if s == 0:
                    continue
                res = synth(img, depth, DegradationParams(m, s, stream), physics)
                xs.append(extract(res.image).stats[m])
                ys.append(s)
        transfers[m] = fit_transfer(xs, ys, clean[:, m])
    return CalibrationTable(transfers, seed)


# -- inference ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonitorOutput:
    presence: np.ndarray
    severities: np.ndarray
    health: float
    uncertainty: np.ndarray

    def record(self) -> dict:
        return {
            "presence": [float(v) for v in self.presence],
            "severities": [float(v) for v in self.severities],
            "health": self.health,
        }


SPATIAL_CUES = (
    Mode.FOG,
    Mode.RAIN,
    Mode.SNOW,
    Mode.DEFOCUS_BLUR,
    Mode.GLARE,
    Mode.VIGNETTING,
    Mode.LENS_OCCLUSION,
)


def tile_mean(a: np.ndarray, tile: int = TILE) -> np.ndarray:
    """Average over ``tile`` x ``tile`` blocks, broadcast back to full size."""
    h, w = a.shape
    ty, tx = -(-h // tile), -(-w // tile)
    pad = np.pad(a, ((0, ty * tile - h), (0, tx * tile - w)), mode="edge")
    means = pad.reshape(ty, tile, tx, tile).mean(axis=(1, 3))
    return np.kron(means, np.ones((tile, tile)))[:h, :w]


def uncertainty_map(features: Features, severities: np.ndarray) -> np.ndarray:
    """Per-tile maximum of severity-weighted spatial cues, in [0, 1]."""
    shape = next(iter(features.maps.values())).shape
    u = np.zeros(shape)
    for m in SPATIAL_CUES:
        if severities[m] > 0:
            cue = np.clip(features.maps[m], 0.0, 1.0)
            u = np.maximum(u, severities[m] * cue)
    return np.clip(tile_mean(u), 0.0, 1.0)


def estimate(img, calibration: CalibrationTable | None, table: RiskWeightTable | None = None) -> MonitorOutput:
    if calibration is None:
        raise CalibrationError("monitor needs a fitted calibration table")
    f = extract(img)
    sev = np.array([calibration.transfers[m](f.stats[m]) for m in Mode])
    sev = severity_vector(np.clip(sev, 0.0, 1.0))
    presence = (sev > PRESENCE_THRESHOLD).astype(np.float64)
    health = compute_gshi(sev, table or default_risk_table())
    return MonitorOutput(presence, sev, health, uncertainty_map(f, sev))
