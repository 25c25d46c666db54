"""Severity-controlled degradation operators.

Each operator maps a clean RGB image (and, for fog and defocus, a normalized
depth map) to a degraded image plus an optional ground-truth footprint mask.
Rendering happens in float64 on the 0-255 scale; a single clip-and-round
produces the 8-bit output.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import DataError, Mode, as_image, as_unit_map, quantize
from .rng import knob_rng


class DepthRequiredError(DataError):
    """Raised when a scene-dependent mode is applied without depth."""


DEPTH_MODES = frozenset({Mode.FOG, Mode.DEFOCUS_BLUR})
# Modes whose footprint mask is meaningful enough for pixel supervision.
SPATIAL_MODES = frozenset(
    {Mode.FOG, Mode.DEFOCUS_BLUR, Mode.RAIN, Mode.SNOW, Mode.GLARE, Mode.VIGNETTING, Mode.LENS_OCCLUSION}
)


@dataclass(frozen=True)
class PhysicsConfig:
    """Severity-to-physics mappings. Override any field with ``replace``."""

    fog_beta: float = 4.0
    fog_airlight: tuple[float, float] = (0.8, 1.0)
    defocus_sigma_max: float = 8.0
    defocus_eps: float = 0.05
    defocus_focal: tuple[float, float] = (0.2, 0.8)
    defocus_layers: int = 4
    motion_length: float = 30.0
    rain_streaks: int = 400
    rain_length: tuple[float, float] = (8.0, 24.0)
    rain_jitter_deg: float = 15.0
    rain_alpha: tuple[float, float] = (0.25, 0.5)
    rain_value: float = 220.0
    rain_contrast: float = 0.15
    snow_particles: int = 600
    snow_radius: tuple[float, float] = (1.0, 3.0)
    snow_attenuation: float = 0.25
    low_light_gamma: float = 2.0
    low_light_read: tuple[float, float] = (2.0, 10.0)
    exposure_under: float = 0.8
    exposure_over: float = 1.5
    noise_shot: float = 0.12
    noise_read: tuple[float, float] = (1.0, 6.0)
    jpeg_quality: tuple[float, float] = (95.0, 85.0)
    glare_radius: tuple[float, float] = (40.0, 80.0)
    glare_streaks: int = 4
    occlusion_coverage: tuple[float, float] = (0.05, 0.35)
    occlusion_blobs: tuple[int, int] = (1, 3)
    occlusion_strength: float = 0.8

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


DEFAULT_PHYSICS = PhysicsConfig()


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def jpeg_quality(s: float, cfg: PhysicsConfig = DEFAULT_PHYSICS) -> int:
    hi, span = cfg.jpeg_quality
    return round_half_up(hi - span * s)


def motion_length(s: float, cfg: PhysicsConfig = DEFAULT_PHYSICS) -> int:
    return 1 + round_half_up(cfg.motion_length * s)


@dataclass(frozen=True)
class DegradationParams:
    mode: Mode
    severity: float
    rng_stream: int = 0
    # Explicit values for stochastic knobs (e.g. ``{"angle": 0.0}``); anything
    # absent is drawn from ``rng_stream``.
    knobs: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        s = float(self.severity)
        if not (0.0 <= s <= 1.0):
            raise ValueError(f"severity must lie in [0, 1], got {self.severity}")
        object.__setattr__(self, "severity", s)
        object.__setattr__(self, "rng_stream", int(self.rng_stream) & 0xFFFFFFFFFFFFFFFF)

    def rng(self, knob: int) -> np.random.Generator:
        return knob_rng(self.rng_stream, int(self.mode), knob)

    def knob(self, name: str, index: int, draw: Callable[[np.random.Generator], float]) -> float:
        if name in self.knobs:
            return float(self.knobs[name])
        return float(draw(self.rng(index)))


@dataclass(frozen=True)
class SynthesisResult:
    image: np.ndarray
    mask: np.ndarray | None
    mask_valid: bool
    info: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.mask is not None and self.mask.shape != self.image.shape[:2]:
            raise ValueError("mask dimensions differ from image")
        if not self.mask_valid and self.mask is not None:
            raise ValueError("mask present but flagged invalid")


# -- helpers ---------------------------------------------------------------------


def gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return x.copy()
    sig = (sigma, sigma, 0) if x.ndim == 3 else (sigma, sigma)
    return ndimage.gaussian_filter(x, sigma=sig, mode="reflect", truncate=4.0)


def _check_depth(depth, shape, mode: Mode) -> np.ndarray:
    if depth is None:
        raise DepthRequiredError(f"{mode.key} needs a depth map")
    return as_unit_map(depth, shape=shape, what="depth")


def radial_field(h: int, w: int) -> np.ndarray:
    """Squared distance to the image center over the squared corner distance."""
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = (xx - cx) ** 2 + (yy - cy) ** 2
    rmax2 = cx**2 + cy**2
    return r2 / rmax2 if rmax2 > 0 else np.zeros((h, w))


def motion_psf(length: int, angle: float) -> np.ndarray:
    """Normalized linear-trajectory kernel of ``length`` samples."""
    if length <= 1:
        return np.ones((1, 1))
    size = length + 2 if length % 2 else length + 3
    c = size // 2
    k = np.zeros((size, size))
    t = np.arange(length) - (length - 1) / 2.0
    xs = c + t * math.cos(angle)
    ys = c + t * math.sin(angle)
    x0, y0 = np.floor(xs).astype(int), np.floor(ys).astype(int)
    fx, fy = xs - x0, ys - y0
    for dx, dy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        np.add.at(k, (y0 + dy, x0 + dx), wgt)
    k[np.abs(k) < 1e-12] = 0.0
    return k / k.sum()


def convolve_rgb(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for ch in range(x.shape[2]):
        out[..., ch] = ndimage.convolve(x[..., ch], kernel, mode="reflect")
    return out


def _splat(acc: np.ndarray, ys: np.ndarray, xs: np.ndarray, vals: np.ndarray) -> None:
    h, w = acc.shape
    ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    np.add.at(acc, (ys[ok], xs[ok]), vals[ok])


# -- operators on float images ------------------------------------------------------
# Each returns (image, mask or None, info) and leaves clipping to the caller.


def _fog(x, depth, p: DegradationParams, cfg: PhysicsConfig):
    s = p.severity
    lo, hi = cfg.fog_airlight
    airlight = p.knob("airlight", 0, lambda r: r.uniform(lo, hi)) * 255.0
    t = np.exp(-cfg.fog_beta * s * depth)
    out = x * t[..., None] + airlight * (1.0 - t[..., None])
    return out, 1.0 - t, {"airlight": airlight, "beta": cfg.fog_beta * s}


def _defocus(x, depth, p: DegradationParams, cfg: PhysicsConfig):
    s = p.severity
    eps = cfg.defocus_eps
    lo, hi = cfg.defocus_focal
    focal = p.knob("focal", 0, lambda r: r.uniform(lo, hi))
    coc = np.abs(1.0 / (depth + eps) - 1.0 / (focal + eps))
    sigma_max = cfg.defocus_sigma_max * s
    cmax = coc.max()
    info = {"focal": focal, "sigma_max": sigma_max}
    if cmax <= 0 or sigma_max <= 0:
        return x.copy(), np.zeros(depth.shape), info
    rel = coc / cmax
    n = cfg.defocus_layers
    levels = np.linspace(0.0, 1.0, n)
    nearest = np.rint(rel * (n - 1)).astype(int)
    out = np.empty_like(x)
    for li, lv in enumerate(levels):
        sel = nearest == li
        if sel.any():
            out[sel] = gaussian_blur(x, sigma_max * lv)[sel]
    return out, rel, info


def _motion(x, p: DegradationParams, cfg: PhysicsConfig):
    length = motion_length(p.severity, cfg)
    angle = p.knob("angle", 0, lambda r: r.uniform(0.0, math.pi))
    psf = motion_psf(length, angle)
    return convolve_rgb(x, psf), None, {"length": length, "angle": angle}


def _rain(x, p: DegradationParams, cfg: PhysicsConfig):
    s = p.severity
    h, w = x.shape[:2]
    cap = cfg.rain_streaks
    n = round_half_up(cap * s)
    r = p.rng(0)
    lmin, lmax = cfg.rain_length
    amin, amax = cfg.rain_alpha
    length = r.uniform(lmin, lmax, cap)[:n]
    jitter = np.deg2rad(r.uniform(-cfg.rain_jitter_deg, cfg.rain_jitter_deg, cap))[:n]
    alpha = r.uniform(amin, amax, cap)[:n]
    x0 = r.uniform(0, w, cap)[:n]
    y0 = r.uniform(-lmax, h, cap)[:n]
    steps = np.arange(0.0, lmax + 0.5, 0.5)
    # (streak, step) sample grid; samples past a streak's length are dropped
    t = np.broadcast_to(steps, (n, steps.size))
    live = t <= length[:, None]
    px = np.rint(x0[:, None] + t * np.sin(jitter)[:, None]).astype(int)
    py = np.rint(y0[:, None] + t * np.cos(jitter)[:, None]).astype(int)
    sid = np.broadcast_to(np.arange(n)[:, None], t.shape)
    inside = live & (px >= 0) & (px < w) & (py >= 0) & (py < h)
    flat = np.unique(np.stack([sid[inside], py[inside] * w + px[inside]]), axis=1)
    acc = np.zeros(h * w)
    np.add.at(acc, flat[1], alpha[flat[0]])
    a = np.clip(acc.reshape(h, w), 0.0, 1.0)
    out = x * (1.0 - a[..., None]) + cfg.rain_value * a[..., None]
    k = cfg.rain_contrast * s
    out = (1.0 - k) * out + k * out.mean()
    return out, a, {"count": n}


def _snow(x, p: DegradationParams, cfg: PhysicsConfig):
    s = p.severity
    h, w = x.shape[:2]
    cap = cfg.snow_particles
    n = round_half_up(cap * s)
    r = p.rng(0)
    rmin, rmax = cfg.snow_radius
    cx = r.uniform(0, w, cap)[:n]
    cy = r.uniform(0, h, cap)[:n]
    rad = r.uniform(rmin, rmax, cap)[:n]
    amp = r.uniform(0.6, 1.0, cap)[:n]
    half = int(math.ceil(2 * rmax))
    off = np.arange(-half, half + 1)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    iy = np.rint(cy).astype(int)[:, None, None] + oy
    ix = np.rint(cx).astype(int)[:, None, None] + ox
    d2 = (ix - cx[:, None, None]) ** 2 + (iy - cy[:, None, None]) ** 2
    sig = rad[:, None, None] / 1.5
    val = amp[:, None, None] * np.exp(-d2 / (2 * sig**2))
    val[d2 > (2 * rad[:, None, None]) ** 2] = 0.0
    acc = np.zeros((h, w))
    _splat(acc, iy.ravel(), ix.ravel(), val.ravel())
    a = np.clip(acc, 0.0, 1.0)
    out = x * (1.0 - a[..., None]) + 255.0 * a[..., None]
    k = cfg.snow_attenuation * s
    out = (1.0 - k) * out + k * 255.0
    return out, a, {"count": n}


def _low_light(x, p: DegradationParams, cfg: PhysicsConfig):
    s = p.severity
    base, gain = cfg.low_light_read
    dark = (x / 255.0) ** (1.0 + cfg.low_light_gamma * s) * 255.0
    sigma = base + gain * s
    return dark + sigma * p.rng(0).standard_normal(x.shape), None, {"read_sigma": sigma}


def _exposure(x, p: DegradationParams, cfg: PhysicsConfig):
    s = p.severity
    over = p.knob("over", 0, lambda r: r.integers(0, 2))
    g = 1.0 + cfg.exposure_over * s if over else 1.0 - cfg.exposure_under * s
    return x * g, None, {"gain": g}


def _noise(x, p: DegradationParams, cfg: PhysicsConfig):
    s = p.severity
    base, gain = cfg.noise_read
    shot = cfg.noise_shot * s * np.sqrt(x / 255.0) * 255.0
    read = base + gain * s
    sigma = np.sqrt(shot**2 + read**2)
    return x + sigma * p.rng(0).standard_normal(x.shape), None, {"read_sigma": read}


def _jpeg(x, p: DegradationParams, cfg: PhysicsConfig):
    q = jpeg_quality(p.severity, cfg)
    buf = io.BytesIO()
    Image.fromarray(quantize(x), "RGB").save(buf, format="JPEG", quality=q, subsampling=2)
    buf.seek(0)
    with Image.open(buf) as im:
        out = np.asarray(im.convert("RGB"), dtype=np.float64)
    return out, None, {"quality": q}


def _vignetting(x, p: DegradationParams, cfg: PhysicsConfig):
    s = p.severity
    fall = s * radial_field(*x.shape[:2])
    return x * (1.0 - fall[..., None]), fall, {}


def _glare(x, p: DegradationParams, cfg: PhysicsConfig):
    s = p.severity
    h, w = x.shape[:2]
    cx = p.knob("cx", 0, lambda r: r.uniform(0, w))
    cy = p.knob("cy", 1, lambda r: r.uniform(0, h / 2.0))
    phase = p.knob("phase", 2, lambda r: r.uniform(0, math.pi / 2))
    r0, r1 = cfg.glare_radius
    radius = r0 + r1 * s
    yy, xx = np.mgrid[0:h, 0:w]
    dx, dy = xx - cx, yy - cy
    dist = np.hypot(dx, dy)
    bloom = np.exp(-(dist**2) / (2 * (radius / 2) ** 2))
    halo = 0.35 * np.exp(-((dist - 0.75 * radius) ** 2) / (2 * (0.06 * radius) ** 2))
    rays = np.zeros((h, w))
    for k in range(cfg.glare_streaks):
        ang = phase + k * 2 * math.pi / cfg.glare_streaks
        along = dx * math.cos(ang) + dy * math.sin(ang)
        perp = -dx * math.sin(ang) + dy * math.cos(ang)
        ray = np.exp(-(perp**2) / (2 * 1.5**2)) * np.exp(-np.maximum(along, 0) / (1.5 * radius))
        rays += np.where(along >= 0, ray, 0.0)
    energy = np.clip(s * (bloom + halo + 0.6 * rays), 0.0, 1.0)
    tint = np.array([255.0, 242.0, 220.0])
    out = x + energy[..., None] * tint
    return out, energy, {"cx": cx, "cy": cy, "radius": radius}


def _blob_distances(h, w, centers, axes, angles):
    """Elliptical distance of every pixel from each blob at unit scale."""
    yy, xx = np.mgrid[0:h, 0:w]
    diag = math.hypot(h, w)
    out = []
    for (cx, cy), (a, b), th in zip(centers, axes, angles):
        u = (xx - cx) * math.cos(th) + (yy - cy) * math.sin(th)
        v = -(xx - cx) * math.sin(th) + (yy - cy) * math.cos(th)
        out.append(np.sqrt((u / (a * diag)) ** 2 + (v / (b * diag)) ** 2))
    return np.min(out, axis=0)


def _occlusion_alpha(d0, scale):
    # the logistic edge is monotone in d, so the union of blobs is set by the nearest one
    d = d0 / scale
    return 1.0 / (1.0 + np.exp(np.clip((d - 1.0) / 0.1, -50, 50)))


def _occlusion(x, p: DegradationParams, cfg: PhysicsConfig):
    s = p.severity
    h, w = x.shape[:2]
    c0, c1 = cfg.occlusion_coverage
    target = c0 + c1 * s
    r = p.rng(0)
    nmin, nmax = cfg.occlusion_blobs
    count = int(r.integers(nmin, nmax + 1))
    centers = [(r.uniform(0.1, 0.9) * w, r.uniform(0.1, 0.9) * h) for _ in range(count)]
    axes = [(r.uniform(0.6, 1.4), r.uniform(0.6, 1.4)) for _ in range(count)]
    angles = [r.uniform(0, math.pi) for _ in range(count)]
    d0 = _blob_distances(h, w, centers, axes, angles)
    lo, hi = 1e-6, 2.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if _occlusion_alpha(d0, mid).mean() < target:
            lo = mid
        else:
            hi = mid
    alpha = _occlusion_alpha(d0, 0.5 * (lo + hi))
    heavy = gaussian_blur(x, max(6.0, 0.05 * min(h, w)))
    k = cfg.occlusion_strength * alpha[..., None]
    return x * (1.0 - k) + heavy * k, alpha, {"blobs": count, "coverage": float(alpha.mean())}


_GLOBAL_OPS = {
    Mode.MOTION_BLUR: _motion,
    Mode.RAIN: _rain,
    Mode.SNOW: _snow,
    Mode.LOW_LIGHT: _low_light,
    Mode.EXPOSURE_SHIFT: _exposure,
    Mode.SENSOR_NOISE: _noise,
    Mode.JPEG_COMPRESSION: _jpeg,
    Mode.VIGNETTING: _vignetting,
    Mode.GLARE: _glare,
    Mode.LENS_OCCLUSION: _occlusion,
}
_DEPTH_OPS = {Mode.FOG: _fog, Mode.DEFOCUS_BLUR: _defocus}


def render(x: np.ndarray, depth, p: DegradationParams, cfg: PhysicsConfig = DEFAULT_PHYSICS):
    """Apply one operator to a float image; returns ``(image, mask, info)``.

    At zero severity the input comes back untouched, with an all-zero mask
    for spatial modes.
    """
    mode = p.mode
    if mode in DEPTH_MODES:
        depth = _check_depth(depth, x.shape[:2], mode)
    if p.severity == 0.0:
        mask = np.zeros(x.shape[:2]) if mode in SPATIAL_MODES else None
        return x, mask, {"identity": True}
    if mode in _DEPTH_OPS:
        out, mask, info = _DEPTH_OPS[mode](x, depth, p, cfg)
    else:
        out, mask, info = _GLOBAL_OPS[mode](x, p, cfg)
    if mode not in SPATIAL_MODES:
        mask = None
    return out, mask, info



def apply(img, depth, p: DegradationParams, cfg: PhysicsConfig = DEFAULT_PHYSICS) -> SynthesisResult:
    img = as_image(img)
    out, mask, info = render(img.astype(np.float64), depth, p, cfg)
    valid = p.mode in SPATIAL_MODES
    return SynthesisResult(quantize(out), mask if valid else None, valid, dict(info))


# Physical image-formation order: scene/atmosphere, lens surface, optics,
# platform motion, exposure, then the sensor and codec.
_CHAIN_RANK = {
    Mode.FOG: 0,
    Mode.RAIN: 1,
    Mode.SNOW: 2,
    Mode.LENS_OCCLUSION: 3,
    Mode.DEFOCUS_BLUR: 4,
    Mode.GLARE: 5,
    Mode.VIGNETTING: 6,
    Mode.MOTION_BLUR: 7,
    Mode.LOW_LIGHT: 8,
    Mode.EXPOSURE_SHIFT: 9,
    Mode.SENSOR_NOISE: 10,
    Mode.JPEG_COMPRESSION: 11,
}


def chain_order(modes: Sequence[Mode]) -> list[Mode]:
    return sorted((Mode(m) for m in modes), key=_CHAIN_RANK.__getitem__)


def apply_chain(img, depth, params: Sequence[DegradationParams], cfg: PhysicsConfig = DEFAULT_PHYSICS) -> SynthesisResult:
    """Apply up to two operators in physical order with a single final quantization.

    The JPEG operator always quantizes its input since the codec works on
    8-bit data.
    """
    img = as_image(img)
    x = img.astype(np.float64)
    ordered = sorted(params, key=lambda p: _CHAIN_RANK[p.mode])
    masks, info = [], {}
    for p in ordered:
        x, mask, i = render(x, depth, p, cfg)
        x = np.clip(x, 0.0, 255.0)
        info[p.mode.key] = i
        if mask is not None:
            masks.append(mask)
    if not masks:
        return SynthesisResult(quantize(x), None, False, info)
    from .labelgen import compose_masks

    return SynthesisResult(quantize(x), compose_masks(masks), True, info)


def _single(mode: Mode):
    def op(img, p: DegradationParams, cfg: PhysicsConfig = DEFAULT_PHYSICS) -> SynthesisResult:
        if p.mode != mode:
            raise ValueError(f"params are for {p.mode.key}, operator is {mode.key}")
        return apply(img, None, p, cfg)

    op.__name__ = f"apply_{mode.key}"
    return op


def apply_fog(img, depth, p: DegradationParams, cfg: PhysicsConfig = DEFAULT_PHYSICS) -> SynthesisResult:
    if p.mode != Mode.FOG:
        raise ValueError(f"params are for {p.mode.key}, operator is fog")
    return apply(img, depth, p, cfg)


def apply_defocus(img, depth, p: DegradationParams, cfg: PhysicsConfig = DEFAULT_PHYSICS) -> SynthesisResult:
    if p.mode != Mode.DEFOCUS_BLUR:
        raise ValueError(f"params are for {p.mode.key}, operator is defocus_blur")
    return apply(img, depth, p, cfg)


apply_motion_blur = _single(Mode.MOTION_BLUR)
apply_rain = _single(Mode.RAIN)
apply_snow = _single(Mode.SNOW)
apply_low_light = _single(Mode.LOW_LIGHT)
apply_exposure_shift = _single(Mode.EXPOSURE_SHIFT)
apply_sensor_noise = _single(Mode.SENSOR_NOISE)
apply_jpeg = _single(Mode.JPEG_COMPRESSION)
apply_vignetting = _single(Mode.VIGNETTING)
apply_glare = _single(Mode.GLARE)
apply_lens_occlusion = _single(Mode.LENS_OCCLUSION)


RAIN_SNOW_HEAVY = 0.3
GLARE_DARK_SEVERE = 0.5


def compatible(a: Mode, sa: float, b: Mode, sb: float) -> bool:
    a, b = Mode(a), Mode(b)
    if a == b:
        return False
    pair = {a, b}
    if pair == {Mode.RAIN, Mode.SNOW} and min(sa, sb) > RAIN_SNOW_HEAVY:
        return False
    if pair == {Mode.GLARE, Mode.LOW_LIGHT} and min(sa, sb) > GLARE_DARK_SEVERE:
        return False
    return True


def with_physics(**overrides) -> PhysicsConfig:
    return replace(DEFAULT_PHYSICS, **overrides)
