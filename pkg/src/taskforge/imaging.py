"""Deterministic raster execution of transformation programs.

All operations are pure functions of their inputs. Arithmetic is pinned to
float64 with explicit ``floor(x + 0.5)`` rounding so results are bit-identical
across runs and platforms. Resampling is bilinear everywhere.
"""

from __future__ import annotations

import hashlib
import io
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from PIL import Image, UnidentifiedImageError

from .lang import Lit, ParamSet, Program, Ref, Step


@dataclass
class RasterImage:
    """RGB image, 8 bits per channel, row-major."""

    width: int
    height: int
    pixels: np.ndarray  # uint8, shape (height, width, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterImage":
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        h, w, c = arr.shape
        assert c == 3
        return cls(w, h, arr)

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def digest(self) -> str:
        """Content address: hex sha256 over dimensions + raw pixel bytes."""
        h = hashlib.sha256()
        h.update(self.width.to_bytes(8, "big"))
        h.update(self.height.to_bytes(8, "big"))
        h.update(self.tobytes())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        return (isinstance(other, RasterImage)
                and self.width == other.width
                and self.height == other.height
                and np.array_equal(self.pixels, other.pixels))


@dataclass(frozen=True)
class ExecLimits:
    timeout: float = 5.0
    max_steps: int = 16
    max_pixels: int = 2048 * 2048
    min_side: int = 32
    max_side: int = 2048


@dataclass(frozen=True)
class PerceptualHash:
    bits: int  # 64-bit dHash value


class ExecError(Exception):
    def __init__(self, category: str, message: str, step_index: int = -1,
                 arg_index: int = -1):
        super().__init__(message)
        self.category = category
        self.step_index = step_index
        self.arg_index = arg_index


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _clamp_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0, 255).astype(np.uint8)


def _millage_x(v: int, width: int) -> int:
    return (v * width) // 1000


def _millage_y(v: int, height: int) -> int:
    return (v * height) // 1000


def _bilinear_sample_black(src: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Sample at fractional grid coords (pixel i centered at gx=i); points
    outside contribute black."""
    h, w = src.shape[:2]
    x0 = np.floor(gx)
    y0 = np.floor(gy)
    fx3 = (gx - x0)[..., None]
    fy3 = (gy - y0)[..., None]
    # black 1-px border + clamped indices realize the outside-is-black rule
    padded = np.zeros((h + 2, w + 2, 3), dtype=np.float64)
    padded[1:h + 1, 1:w + 1] = src
    xi = np.clip(x0.astype(np.int64) + 1, 0, w + 1)
    yi = np.clip(y0.astype(np.int64) + 1, 0, h + 1)
    xj = np.clip(x0.astype(np.int64) + 2, 0, w + 1)
    yj = np.clip(y0.astype(np.int64) + 2, 0, h + 1)
    v00 = padded[yi, xi]
    v10 = padded[yi, xj]
    v01 = padded[yj, xi]
    v11 = padded[yj, xj]
    out = ((1 - fx3) * (1 - fy3) * v00 + fx3 * (1 - fy3) * v10
           + (1 - fx3) * fy3 * v01 + fx3 * fy3 * v11)
    return _clamp_u8(_round_half_up(out))


def op_rotate(img: RasterImage, degrees: float) -> RasterImage:
    """Counter-clockwise rotation about the image center. The canvas expands
    to the rotated bounding box; uncovered pixels are black. Multiples of 90
    are exact pixel permutations."""
    deg = float(degrees) % 360.0
    arr = img.pixels
    if deg == 0.0:
        return RasterImage.from_array(arr.copy())
    if deg == 90.0:
        return RasterImage.from_array(np.rot90(arr, 1))
    if deg == 180.0:
        return RasterImage.from_array(arr[::-1, ::-1])
    if deg == 270.0:
        return RasterImage.from_array(np.rot90(arr, 3))

    theta = math.radians(deg)
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    w, h = img.width, img.height
    out_w = max(1, int(math.floor(w * abs(cos_t) + h * abs(sin_t) + 0.5)))
    out_h = max(1, int(math.floor(w * abs(sin_t) + h * abs(cos_t) + 0.5)))

    xs = np.arange(out_w, dtype=np.float64) + 0.5 - out_w / 2.0
    ys = np.arange(out_h, dtype=np.float64) + 0.5 - out_h / 2.0
    xg, yg = np.meshgrid(xs, ys)
    # inverse map: rotate output coords by -theta (y-down axes)
    src_x = xg * cos_t - yg * sin_t + w / 2.0
    src_y = xg * sin_t + yg * cos_t + h / 2.0
    out = _bilinear_sample_black(arr, src_x - 0.5, src_y - 0.5)
    return RasterImage.from_array(out)


def op_flip(img: RasterImage, direction: str) -> RasterImage:
    if direction == "h":
        return RasterImage.from_array(img.pixels[:, ::-1])
    if direction == "v":
        return RasterImage.from_array(img.pixels[::-1, :])
    raise ExecError("degenerate", f"flip direction must be h or v, got {direction!r}")


def op_crop(img: RasterImage, x0: int, y0: int, x1: int, y1: int) -> RasterImage:
    px0 = _millage_x(x0, img.width)
    px1 = _millage_x(x1, img.width)
    py0 = _millage_y(y0, img.height)
    py1 = _millage_y(y1, img.height)
    if not (0 <= px0 < px1 <= img.width and 0 <= py0 < py1 <= img.height):
        raise ExecError("crop-degenerate",
                        f"crop box ({px0},{py0},{px1},{py1}) degenerate or out of range")
    return RasterImage.from_array(img.pixels[py0:py1, px0:px1].copy())


def op_jigsaw(img: RasterImage, n: int, order: tuple) -> RasterImage:
    if n < 1:
        raise ExecError("degenerate", "jigsaw grid must be >= 1")
    if sorted(order) != list(range(n * n)):
        raise ExecError("jigsaw-not-permutation",
                        f"order must be a permutation of 0..{n * n - 1}")
    bw = img.width // n
    bh = img.height // n
    if bw == 0 or bh == 0:
        raise ExecError("degenerate", "jigsaw blocks would be empty")
    src = img.pixels[: n * bh, : n * bw]
    out = np.empty_like(src)
    for new_idx in range(n * n):
        nr, nc = divmod(new_idx, n)
        orow, ocol = divmod(order[new_idx], n)
        out[nr * bh:(nr + 1) * bh, nc * bw:(nc + 1) * bw] = \
            src[orow * bh:(orow + 1) * bh, ocol * bw:(ocol + 1) * bw]
    return RasterImage.from_array(out)


def op_draw_rect(img: RasterImage, x0: int, y0: int, x1: int, y1: int,
                 width_px: int) -> RasterImage:
    px0 = _millage_x(x0, img.width)
    px1 = _millage_x(x1, img.width)
    py0 = _millage_y(y0, img.height)
    py1 = _millage_y(y1, img.height)
    if px1 <= px0 or py1 <= py0 or width_px < 1:
        raise ExecError("degenerate", "draw_rect box degenerate")
    out = img.pixels.copy()
    h, w = out.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    inside = (xs >= px0) & (xs <= px1) & (ys >= py0) & (ys <= py1)
    ring = inside & ((xs < px0 + width_px) | (xs > px1 - width_px)
                     | (ys < py0 + width_px) | (ys > py1 - width_px))
    out[ring] = (255, 0, 0)
    return RasterImage.from_array(out)


def op_brightness(img: RasterImage, factor: float) -> RasterImage:
    vals = img.pixels.astype(np.float64) * float(factor)
    return RasterImage.from_array(_clamp_u8(_round_half_up(vals)))


def op_contrast(img: RasterImage, factor: float) -> RasterImage:
    vals = (img.pixels.astype(np.float64) - 128.0) * float(factor) + 128.0
    return RasterImage.from_array(_clamp_u8(_round_half_up(vals)))


def op_grayscale(img: RasterImage) -> RasterImage:
    arr = img.pixels.astype(np.float64)
    luma = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    luma = _clamp_u8(_round_half_up(luma))
    return RasterImage.from_array(np.repeat(luma[..., None], 3, axis=2))


def op_invert(img: RasterImage) -> RasterImage:
    return RasterImage.from_array(255 - img.pixels)


def op_pixelate(img: RasterImage, block: int) -> RasterImage:
    if block < 1:
        raise ExecError("degenerate", "pixelate block must be >= 1")
    arr = img.pixels.astype(np.float64)
    h, w = img.height, img.width
    row_idx = np.arange(0, h, block)
    col_idx = np.arange(0, w, block)
    sums = np.add.reduceat(np.add.reduceat(arr, row_idx, axis=0), col_idx, axis=1)
    row_counts = np.minimum(row_idx + block, h) - row_idx
    col_counts = np.minimum(col_idx + block, w) - col_idx
    counts = row_counts[:, None] * col_counts[None, :]
    means = _clamp_u8(_round_half_up(sums / counts[..., None]))
    out = np.repeat(np.repeat(means, block, axis=0), block, axis=1)[:h, :w]
    return RasterImage.from_array(out)


def op_resize(img: RasterImage, new_w: int, new_h: int) -> RasterImage:
    if new_w < 1 or new_h < 1:
        raise ExecError("degenerate", "resize dimensions must be >= 1")
    w, h = img.width, img.height
    gx = (np.arange(new_w, dtype=np.float64) + 0.5) * w / new_w - 0.5
    gy = (np.arange(new_h, dtype=np.float64) + 0.5) * h / new_h - 0.5
    gx = np.clip(gx, 0.0, w - 1.0)
    gy = np.clip(gy, 0.0, h - 1.0)
    xg, yg = np.meshgrid(gx, gy)
    return RasterImage.from_array(_bilinear_sample_black(img.pixels, xg, yg))


def _as_float(v, step_idx: int) -> float:
    if isinstance(v, (int, Fraction)):
        return float(v)
    raise ExecError("degenerate", f"expected a number, got {v!r}", step_idx)


def _as_int(v, step_idx: int) -> int:
    if isinstance(v, int):
        return v
    raise ExecError("degenerate", f"expected an integer, got {v!r}", step_idx)


def _resolve(expr, params: ParamSet, step_idx: int):
    if isinstance(expr, Ref):
        try:
            return params.value(expr.name)
        except KeyError:
            raise ExecError("degenerate", f"unbound parameter ${expr.name}", step_idx)
    assert isinstance(expr, Lit)
    return expr.value


def _apply_step(img: RasterImage, step: Step, params: ParamSet,
                idx: int) -> RasterImage:
    vals = [_resolve(e, params, idx) for e in step.args]
    op = step.op
    if op == "rotate":
        return op_rotate(img, _as_float(vals[0], idx))
    if op == "flip":
        if not isinstance(vals[0], str):
            raise ExecError("degenerate", "flip needs h or v", idx)
        return op_flip(img, vals[0])
    if op == "crop":
        return op_crop(img, *(_as_int(v, idx) for v in vals))
    if op == "jigsaw":
        n = _as_int(vals[0], idx)
        if not isinstance(vals[1], tuple):
            raise ExecError("degenerate", "jigsaw order must be an int list", idx)
        return op_jigsaw(img, n, vals[1])
    if op == "draw_rect":
        return op_draw_rect(img, *(_as_int(v, idx) for v in vals))
    if op == "brightness":
        return op_brightness(img, _as_float(vals[0], idx))
    if op == "contrast":
        return op_contrast(img, _as_float(vals[0], idx))
    if op == "grayscale":
        return op_grayscale(img)
    if op == "invert":
        return op_invert(img)
    if op == "pixelate":
        return op_pixelate(img, _as_int(vals[0], idx))
    if op == "resize":
        return op_resize(img, _as_int(vals[0], idx), _as_int(vals[1], idx))
    raise ExecError("degenerate", f"unknown op {op!r}", idx)


def execute(program: Program, params: ParamSet, image: RasterImage,
            limits: ExecLimits = ExecLimits()) -> RasterImage:
    """Run the step pipeline with ``$name`` bound from ``params``.

    Deterministic; raises ExecError (with the failing step index) on limit
    violations or degenerate geometry."""
    if len(program.steps) > limits.max_steps:
        raise ExecError("limit-exceeded",
                        f"program has more than {limits.max_steps} steps")
    deadline = time.monotonic() + limits.timeout
    cur = image
    for idx, step in enumerate(program.steps):
        if time.monotonic() > deadline:
            raise ExecError("limit-exceeded", "execution timed out", idx)
        try:
            cur = _apply_step(cur, step, params, idx)
        except ExecError as e:
            if e.step_index < 0:
                e.step_index = idx
            raise
        if cur.width * cur.height > limits.max_pixels:
            raise ExecError("limit-exceeded",
                            f"intermediate exceeds {limits.max_pixels} pixels", idx)
    if not (limits.min_side <= cur.width <= limits.max_side
            and limits.min_side <= cur.height <= limits.max_side):
        raise ExecError("size-bounds",
                        f"output {cur.width}x{cur.height} outside "
                        f"[{limits.min_side}, {limits.max_side}]",
                        len(program.steps) - 1)
    return cur


def execute_all(program: Program, image: RasterImage,
                limits: ExecLimits = ExecLimits()) -> list:
    """Execute once per declared argument set, in order."""
    outputs = []
    for j, ps in enumerate(program.arg_sets):
        try:
            outputs.append(execute(program, ps, image, limits))
        except ExecError as e:
            e.arg_index = j
            raise
    return outputs


def perceptual_hash(img: RasterImage) -> PerceptualHash:
    """64-bit difference hash: grayscale 9x8 area-averaged downsample, bit set
    where the left cell is strictly brighter than its right neighbor."""
    arr = img.pixels.astype(np.float64)
    luma = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    h, w = luma.shape
    cells = np.empty((8, 9), dtype=np.float64)
    for r in range(8):
        y0 = (r * h) // 8
        y1 = ((r + 1) * h) // 8
        for c in range(9):
            x0 = (c * w) // 9
            x1 = ((c + 1) * w) // 9
            block = luma[y0:max(y1, y0 + 1), x0:max(x1, x0 + 1)]
            cells[r, c] = block.mean()
    bits = 0
    k = 0
    for r in range(8):
        for c in range(8):
            if cells[r, c] > cells[r, c + 1]:
                bits |= 1 << k
            k += 1
    return PerceptualHash(bits)


def hash_similarity(a: PerceptualHash, b: PerceptualHash) -> float:
    """1 - normalized Hamming distance over the 64 hash bits."""
    return 1.0 - bin(a.bits ^ b.bits).count("1") / 64.0


def load_png(data: bytes) -> RasterImage:
    """Decode a PNG to RGB; alpha is composited over black."""
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ExecError("malformed-png", f"cannot decode PNG: {e}")
    if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
        rgba = im.convert("RGBA")
        arr = np.asarray(rgba, dtype=np.float64)
        alpha = arr[..., 3:4] / 255.0
        rgb = _clamp_u8(_round_half_up(arr[..., :3] * alpha))
        return RasterImage.from_array(rgb)
    return RasterImage.from_array(np.asarray(im.convert("RGB"), dtype=np.uint8))


def save_png(img: RasterImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img.pixels, "RGB").save(buf, format="PNG")
    return buf.getvalue()


class ImageStore:
    """Content-addressed PNG store: <digest>.png under a root directory."""

    def __init__(self, root):
        from pathlib import Path
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, img: RasterImage) -> str:
        ref = img.digest()
        path = self.root / f"{ref}.png"
        if not path.exists():
            path.write_bytes(save_png(img))
        return ref

    def get(self, ref: str) -> RasterImage:
        return load_png((self.root / f"{ref}.png").read_bytes())

    def path(self, ref: str):
        return self.root / f"{ref}.png"
