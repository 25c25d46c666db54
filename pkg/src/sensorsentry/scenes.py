"""Procedural clean road scenes with matching relative depth.

Stand-ins for real driving frames so the toolkit runs end to end without a
dataset download. Scenes have a sky, a receding road with lane markings and a
few textured box "objects", all at mid exposure.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import quantize, write_depth, write_image
from .rng import keyed

DEFAULT_SIZE = (120, 160)


def make_scene(seed: int, size: tuple[int, int] = DEFAULT_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(image uint8 HxWx3, depth float HxW)``; depth 1 is far."""
    h, w = size
    r = keyed(seed, 0x5CE7E)
    horizon = int(h * r.uniform(0.35, 0.5))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    img = np.zeros((h, w, 3))
    depth = np.ones((h, w))

    sky_top = np.array([90.0, 130.0, 190.0]) * r.uniform(0.85, 1.1)
    sky_bot = np.array([170.0, 190.0, 215.0]) * r.uniform(0.85, 1.05)
    t = np.clip(yy / max(horizon, 1), 0, 1)[..., None]
    img[:] = sky_top * (1 - t) + sky_bot * t
    clouds = ndimage.gaussian_filter(r.standard_normal((h, w)), 4.0)
    img += (clouds / (clouds.std() + 1e-9) * 10.0)[..., None]

    ground = yy >= horizon
    rows = np.clip((yy - horizon) / max(h - 1 - horizon, 1), 0, 1)
    depth[ground] = (0.9 * (1 - rows) + 0.04)[ground]
    grass = np.array([80.0, 110.0, 60.0]) * r.uniform(0.8, 1.2)
    asphalt = np.array([105.0, 105.0, 110.0]) * r.uniform(0.85, 1.15)
    cx = w * r.uniform(0.4, 0.6)
    half = 0.08 * w + rows * 0.45 * w
    road = ground & (np.abs(xx - cx) < half)
    img[ground & ~road] = grass
    img[road] = asphalt
    lane = road & (np.abs(xx - cx) < 0.6 + rows * 2.5) & (np.sin(rows * 40.0) > 0)
    img[lane] = 225.0
    for side in (-1, 1):
        edge = road & (np.abs(xx - (cx + side * half * 0.92)) < 0.5 + rows * 1.5)
        img[edge] = 215.0

    for _ in range(int(r.integers(3, 7))):
        base = int(r.uniform(horizon + 2, h - 2))
        rel = (base - horizon) / max(h - 1 - horizon, 1)
        bh = int(6 + rel * r.uniform(20, 40))
        bw = int(8 + rel * r.uniform(20, 50))
        x0 = int(r.uniform(0, max(w - bw, 1)))
        y0 = max(base - bh, 0)
        color = r.uniform(30, 220, 3)
        img[y0:base, x0 : x0 + bw] = color
        img[y0 : y0 + max(bh // 4, 1), x0 : x0 + bw] *= 0.7
        depth[y0:base, x0 : x0 + bw] = 0.9 * (1 - rel) + 0.04

    for _ in range(int(r.integers(2, 5))):
        bw = int(r.uniform(0.08, 0.2) * w)
        bh = int(r.uniform(0.1, 0.3) * h)
        x0 = int(r.uniform(0, w - bw))
        y0 = max(horizon - bh, 0)
        shade = r.uniform(60, 160)
        img[y0:horizon, x0 : x0 + bw] = [shade, shade * 0.95, shade * 0.9]
        win = (yy[y0:horizon, x0 : x0 + bw] % 5 < 2) & (xx[y0:horizon, x0 : x0 + bw] % 4 < 2)
        img[y0:horizon, x0 : x0 + bw][win] = shade * 0.6
        depth[y0:horizon, x0 : x0 + bw] = 0.93

    texture = ndimage.gaussian_filter(r.standard_normal((h, w, 3)), (0.7, 0.7, 0))
    img += texture / (texture.std() + 1e-9) * 5.0
    return quantize(img), np.clip(depth, 0.0, 1.0)


def write_scenes(out_dir: str | Path, count: int, seed: int = 0, size: tuple[int, int] = DEFAULT_SIZE,
                 depth_format: str = "png") -> tuple[list[Path], list[Path]]:
    """Write ``count`` scenes as ``images/scene_NNNN.png`` + ``depth/scene_NNNN.<fmt>``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    imgs, deps = [], []
    for k in range(count):
        img, depth = make_scene(seed * 100003 + k, size)
        ip = out / "images" / f"scene_{k:04d}.png"
        dp = out / "depth" / f"scene_{k:04d}.{depth_format}"
        write_image(ip, img)
        write_depth(dp, depth)
        imgs.append(ip)
        deps.append(dp)
    return imgs, deps
