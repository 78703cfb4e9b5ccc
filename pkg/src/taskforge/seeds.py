"""Built-in seed programs and the synthetic test image library.

The four seeds cover the four basic transformation families (block shuffle,
rotation, cropping, box drawing). Their pairwise BLEU similarity stays under
the deduplication threshold so they coexist in a fresh queue.
"""

from __future__ import annotations

import random

import numpy as np

from .imaging import RasterImage

SEED_JIGSAW = """\
param order
step jigsaw 2 $order
args order=[3,0,1,2]
args order=[1,0,3,2]
args order=[0,3,2,1]
args order=[2,1,0,3]
"""

SEED_ROTATION = """\
param angle
step rotate $angle
args angle=15
args angle=45
args angle=90
args angle=180
"""

SEED_CROPPING = """\
param left
param top
param right
param bottom
step crop $left $top $right $bottom
args left=205, top=220, right=335, bottom=422
args left=103, top=94, right=378, bottom=210
args left=452, top=603, right=565, bottom=750
args left=154, top=752, right=357, bottom=958
"""

SEED_DRAW_BOX = """\
param x0
param y0
param x1
param y1
step draw_rect $x0 $y0 $x1 $y1 5
args x0=61, y0=340, x1=728, y1=566
args x0=118, y0=72, x1=905, y1=481
args x0=417, y0=506, x1=663, y1=844
args x0=32, y0=615, x1=298, y1=937
"""

SEED_PROGRAMS = (SEED_JIGSAW, SEED_ROTATION, SEED_CROPPING, SEED_DRAW_BOX)

LIBRARY_SIZE = 32
LIBRARY_SIDE = 512


def _gradient(rng: random.Random, side: int) -> np.ndarray:
    c0 = np.array([rng.randrange(256) for _ in range(3)], dtype=np.float64)
    c1 = np.array([rng.randrange(256) for _ in range(3)], dtype=np.float64)
    ang = rng.uniform(0, 2 * np.pi)
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64) / (side - 1)
    t = (xs * np.cos(ang) + ys * np.sin(ang))
    t = (t - t.min()) / (t.max() - t.min())
    return c0[None, None] + t[..., None] * (c1 - c0)[None, None]


def _checkerboard(rng: random.Random, side: int) -> np.ndarray:
    cell = rng.choice([16, 24, 32, 48, 64])
    c0 = np.array([rng.randrange(256) for _ in range(3)], dtype=np.float64)
    c1 = np.array([rng.randrange(256) for _ in range(3)], dtype=np.float64)
    ys, xs = np.mgrid[0:side, 0:side]
    mask = ((xs // cell + ys // cell) % 2).astype(bool)
    out = np.where(mask[..., None], c1[None, None], c0[None, None])
    return out


def _stripes(rng: random.Random, side: int) -> np.ndarray:
    period = rng.choice([20, 28, 40, 56])
    phase = rng.uniform(0, 2 * np.pi)
    ang = rng.uniform(0, np.pi)
    base = np.array([rng.randrange(256) for _ in range(3)], dtype=np.float64)
    amp = np.array([rng.randrange(40, 128) for _ in range(3)], dtype=np.float64)
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    wave = np.sin(2 * np.pi * (xs * np.cos(ang) + ys * np.sin(ang)) / period + phase)
    return base[None, None] + wave[..., None] * amp[None, None]


def _blobs(rng: random.Random, side: int) -> np.ndarray:
    out = np.zeros((side, side, 3), dtype=np.float64)
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    for _ in range(rng.randrange(3, 7)):
        cx, cy = rng.uniform(0, side), rng.uniform(0, side)
        sigma = rng.uniform(side / 12, side / 4)
        color = np.array([rng.randrange(256) for _ in range(3)], dtype=np.float64)
        g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))
        out += g[..., None] * color[None, None]
    return out


_PATTERNS = (_gradient, _checkerboard, _stripes, _blobs)


def make_library_image(index: int, side: int = LIBRARY_SIDE) -> RasterImage:
    rng = random.Random(0xF0E0 + index)
    pattern = _PATTERNS[index % len(_PATTERNS)]
    arr = pattern(rng, side)
    return RasterImage.from_array(np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8))


def build_test_library(directory, count: int = LIBRARY_SIZE,
                       side: int = LIBRARY_SIDE) -> list:
    """Write the bundled synthetic library as PNGs; returns file paths."""
    from pathlib import Path

    from .imaging import save_png
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        img = make_library_image(i, side)
        path = directory / f"library_{i:03d}.png"
        path.write_bytes(save_png(img))
        paths.append(path)
    return paths
