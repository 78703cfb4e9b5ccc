"""Independent reference implementations and generators used as test oracles.

Everything here is written naively (scalar loops, direct formula
transcription) and on purpose shares no code with the package internals it
checks.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction

import numpy as np

from taskforge.imaging import RasterImage
from taskforge.lang import ParamSet, Program, Ref, Step, Lit


def random_image(rng: random.Random, w: int, h: int) -> RasterImage:
    arr = np.array([[[rng.randrange(256) for _ in range(3)]
                     for _ in range(w)] for _ in range(h)], dtype=np.uint8)
    return RasterImage.from_array(arr)


# ---------------------------------------------------------------------------
# Naive per-pixel references

def _px(img: RasterImage, x: int, y: int):
    if 0 <= x < img.width and 0 <= y < img.height:
        return [float(v) for v in img.pixels[y, x]]
    return [0.0, 0.0, 0.0]


def _bilinear_at(img: RasterImage, gx: float, gy: float):
    x0 = math.floor(gx)
    y0 = math.floor(gy)
    fx = gx - x0
    fy = gy - y0
    out = []
    for c in range(3):
        v00 = _px(img, x0, y0)[c]
        v10 = _px(img, x0 + 1, y0)[c]
        v01 = _px(img, x0, y0 + 1)[c]
        v11 = _px(img, x0 + 1, y0 + 1)[c]
        val = ((1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10
               + (1 - fx) * fy * v01 + fx * fy * v11)
        out.append(int(min(max(math.floor(val + 0.5), 0), 255)))
    return out


def ref_rotate(img: RasterImage, degrees: float) -> RasterImage:
    deg = float(degrees) % 360.0
    w, h = img.width, img.height
    if deg == 0.0:
        return RasterImage.from_array(img.pixels.copy())
    if deg in (90.0, 180.0, 270.0):
        quarter = int(deg // 90)
        cur = img
        for _ in range(quarter):
            cw, ch = cur.width, cur.height
            out = np.zeros((cw, ch, 3), dtype=np.uint8)
            for y in range(ch):
                for x in range(cw):
                    # (x, y) -> (y, W-1-x) for one quarter turn CCW
                    out[cw - 1 - x, y] = cur.pixels[y, x]
            cur = RasterImage.from_array(out)
        return cur
    theta = math.radians(deg)
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    out_w = max(1, int(math.floor(w * abs(cos_t) + h * abs(sin_t) + 0.5)))
    out_h = max(1, int(math.floor(w * abs(sin_t) + h * abs(cos_t) + 0.5)))
    out = np.zeros((out_h, out_w, 3), dtype=np.uint8)
    for yo in range(out_h):
        for xo in range(out_w):
            xg = xo + 0.5 - out_w / 2.0
            yg = yo + 0.5 - out_h / 2.0
            sx = xg * cos_t - yg * sin_t + w / 2.0
            sy = xg * sin_t + yg * cos_t + h / 2.0
            out[yo, xo] = _bilinear_at(img, sx - 0.5, sy - 0.5)
    return RasterImage.from_array(out)


def ref_flip(img: RasterImage, direction: str) -> RasterImage:
    w, h = img.width, img.height
    out = np.zeros_like(img.pixels)
    for y in range(h):
        for x in range(w):
            if direction == "h":
                out[y, w - 1 - x] = img.pixels[y, x]
            else:
                out[h - 1 - y, x] = img.pixels[y, x]
    return RasterImage.from_array(out)


def ref_crop(img: RasterImage, x0: int, y0: int, x1: int, y1: int) -> RasterImage:
    px0 = (x0 * img.width) // 1000
    px1 = (x1 * img.width) // 1000
    py0 = (y0 * img.height) // 1000
    py1 = (y1 * img.height) // 1000
    out = np.zeros((py1 - py0, px1 - px0, 3), dtype=np.uint8)
    for y in range(py0, py1):
        for x in range(px0, px1):
            out[y - py0, x - px0] = img.pixels[y, x]
    return RasterImage.from_array(out)


def ref_jigsaw(img: RasterImage, n: int, order) -> RasterImage:
    bw = img.width // n
    bh = img.height // n
    out = np.zeros((n * bh, n * bw, 3), dtype=np.uint8)
    for new_idx in range(n * n):
        nr, nc = divmod(new_idx, n)
        orow, ocol = divmod(order[new_idx], n)
        for dy in range(bh):
            for dx in range(bw):
                out[nr * bh + dy, nc * bw + dx] = \
                    img.pixels[orow * bh + dy, ocol * bw + dx]
    return RasterImage.from_array(out)


def ref_draw_rect(img: RasterImage, x0: int, y0: int, x1: int, y1: int,
                  width_px: int) -> RasterImage:
    px0 = (x0 * img.width) // 1000
    px1 = (x1 * img.width) // 1000
    py0 = (y0 * img.height) // 1000
    py1 = (y1 * img.height) // 1000
    out = img.pixels.copy()
    for y in range(img.height):
        for x in range(img.width):
            if px0 <= x <= px1 and py0 <= y <= py1:
                on_ring = (x < px0 + width_px or x > px1 - width_px
                           or y < py0 + width_px or y > py1 - width_px)
                if on_ring:
                    out[y, x] = (255, 0, 0)
    return RasterImage.from_array(out)


def _clamp_round(val: float) -> int:
    return int(min(max(math.floor(val + 0.5), 0), 255))


def ref_brightness(img: RasterImage, factor: float) -> RasterImage:
    out = np.zeros_like(img.pixels)
    for y in range(img.height):
        for x in range(img.width):
            for c in range(3):
                out[y, x, c] = _clamp_round(float(img.pixels[y, x, c]) * factor)
    return RasterImage.from_array(out)


def ref_contrast(img: RasterImage, factor: float) -> RasterImage:
    out = np.zeros_like(img.pixels)
    for y in range(img.height):
        for x in range(img.width):
            for c in range(3):
                v = (float(img.pixels[y, x, c]) - 128.0) * factor + 128.0
                out[y, x, c] = _clamp_round(v)
    return RasterImage.from_array(out)


def ref_grayscale(img: RasterImage) -> RasterImage:
    out = np.zeros_like(img.pixels)
    for y in range(img.height):
        for x in range(img.width):
            r, g, b = (float(v) for v in img.pixels[y, x])
            luma = _clamp_round(0.299 * r + 0.587 * g + 0.114 * b)
            out[y, x] = (luma, luma, luma)
    return RasterImage.from_array(out)


def ref_invert(img: RasterImage) -> RasterImage:
    out = np.zeros_like(img.pixels)
    for y in range(img.height):
        for x in range(img.width):
            for c in range(3):
                out[y, x, c] = 255 - int(img.pixels[y, x, c])
    return RasterImage.from_array(out)


def ref_pixelate(img: RasterImage, block: int) -> RasterImage:
    out = np.zeros_like(img.pixels)
    for by in range(0, img.height, block):
        for bx in range(0, img.width, block):
            ys = range(by, min(by + block, img.height))
            xs = range(bx, min(bx + block, img.width))
            for c in range(3):
                total = 0.0
                for x in xs:
                    col = 0.0
                    for y in ys:
                        col += float(img.pixels[y, x, c])
                    total += col
                mean = _clamp_round(total / (len(xs) * len(ys)))
                for y in ys:
                    for x in xs:
                        out[y, x, c] = mean
    return RasterImage.from_array(out)


def ref_resize(img: RasterImage, new_w: int, new_h: int) -> RasterImage:
    out = np.zeros((new_h, new_w, 3), dtype=np.uint8)
    for yo in range(new_h):
        for xo in range(new_w):
            gx = (xo + 0.5) * img.width / new_w - 0.5
            gy = (yo + 0.5) * img.height / new_h - 0.5
            gx = min(max(gx, 0.0), img.width - 1.0)
            gy = min(max(gy, 0.0), img.height - 1.0)
            out[yo, xo] = _bilinear_at(img, gx, gy)
    return RasterImage.from_array(out)


# ---------------------------------------------------------------------------
# Reference BLEU (same definition, independently written)

def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def ref_bleu_one_way(cand, ref) -> float:
    precisions = []
    for n in (1, 2, 3, 4):
        cgrams = _ngrams(cand, n)
        rgrams = _ngrams(ref, n)
        rcounts = {}
        for g in rgrams:
            rcounts[g] = rcounts.get(g, 0) + 1
        ccounts = {}
        for g in cgrams:
            ccounts[g] = ccounts.get(g, 0) + 1
        clipped = 0
        for g, c in ccounts.items():
            clipped += min(c, rcounts.get(g, 0))
        precisions.append((clipped + 1) / (len(cgrams) + 1))
    geo = (precisions[0] * precisions[1] * precisions[2] * precisions[3]) ** 0.25
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * geo


def ref_bleu_similarity(a_tokens, b_tokens) -> float:
    if not a_tokens and not b_tokens:
        return 1.0
    if not a_tokens or not b_tokens:
        return 0.0
    return (ref_bleu_one_way(a_tokens, b_tokens)
            + ref_bleu_one_way(b_tokens, a_tokens)) / 2.0


# ---------------------------------------------------------------------------
# Random valid program generator

def random_program(rng: random.Random, n_arg_sets: int = 4) -> Program:
    """A structurally valid random program with one parameterized step and
    optional literal-only extra steps."""
    kind = rng.choice(["rotate", "crop", "jigsaw", "brightness", "pixelate",
                       "resize", "draw_rect"])
    params: list = []
    steps: list = []
    sets: list = []
    if kind == "rotate":
        params = ["angle"]
        steps = [Step("rotate", (Ref("angle"),))]
        angles = rng.sample(range(5, 360, 5), n_arg_sets)
        sets = [{"angle": a} for a in angles]
    elif kind == "crop":
        params = ["a", "b", "c", "d"]
        steps = [Step("crop", (Ref("a"), Ref("b"), Ref("c"), Ref("d")))]
        xs = rng.sample(range(0, 300, 10), n_arg_sets)
        for x0 in xs:
            y0 = rng.randrange(0, 300, 10)
            sets.append({"a": x0, "b": y0, "c": x0 + rng.randrange(300, 600, 10),
                         "d": y0 + rng.randrange(300, 600, 10)})
    elif kind == "jigsaw":
        params = ["order"]
        steps = [Step("jigsaw", (Lit(2), Ref("order")))]
        perms = set()
        while len(perms) < n_arg_sets:
            p = list(range(4))
            rng.shuffle(p)
            perms.add(tuple(p))
        sets = [{"order": p} for p in sorted(perms)]
    elif kind == "brightness":
        params = ["f"]
        steps = [Step("brightness", (Ref("f"),))]
        factors = rng.sample(range(40, 200, 5), n_arg_sets)
        sets = [{"f": Fraction(f, 100)} for f in factors]
    elif kind == "pixelate":
        params = ["b"]
        steps = [Step("pixelate", (Ref("b"),))]
        sets = [{"b": v} for v in rng.sample([2, 3, 4, 5, 6, 8, 10, 12],
                                             n_arg_sets)]
    elif kind == "resize":
        params = ["w", "hh"]
        steps = [Step("resize", (Ref("w"), Ref("hh")))]
        ws = rng.sample(range(64, 256, 8), n_arg_sets)
        sets = [{"w": w, "hh": rng.randrange(64, 256, 8)} for w in ws]
    else:
        params = ["a", "b", "c", "d"]
        steps = [Step("draw_rect", (Ref("a"), Ref("b"), Ref("c"), Ref("d"),
                                    Lit(rng.choice([2, 3, 4, 5]))))]
        xs = rng.sample(range(0, 300, 10), n_arg_sets)
        for x0 in xs:
            y0 = rng.randrange(0, 300, 10)
            sets.append({"a": x0, "b": y0, "c": x0 + rng.randrange(300, 600, 10),
                         "d": y0 + rng.randrange(300, 600, 10)})
    if rng.random() < 0.4:
        steps.append(rng.choice([Step("invert", ()), Step("grayscale", ()),
                                 Step("flip", (Lit("h"),)),
                                 Step("flip", (Lit("v"),))]))
    arg_sets = tuple(ParamSet(tuple((p, s[p]) for p in params)) for s in sets)
    return Program(tuple(params), tuple(steps), arg_sets)
