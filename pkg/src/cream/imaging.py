"""Grayscale canvases, box geometry, text rasterization, and patch extraction.

Pixel intensities live in [0, 1] with white paper = 1.0 and ink = 0.0. Box
coordinates are normalized to [0, 1] in both axes. All functions here are
pure value transforms (canvases mutate only where documented) and safe to
parallelize across canvases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import font5x7
from .kernels import bilinear_resize

INK = 0.0
PAPER = 1.0
MASK_INTENSITY = 0.5


class LayoutError(ValueError):
    """Text or layout does not fit the canvas."""


@dataclass
class Canvas:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) float64 in [0, 1]

    @classmethod
    def blank(cls, width: int, height: int) -> "Canvas":
        if width < 1 or height < 1:
            raise ValueError(f"bad canvas size {width}x{height}")
        return cls(width, height, np.full((height, width), PAPER, dtype=np.float64))

    def copy(self) -> "Canvas":
        return Canvas(self.width, self.height, self.pixels.copy())


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise ValueError(f"invalid box ({self.x0}, {self.y0}, {self.x1}, {self.y1})")

    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def intersection_area(self, other: "Box") -> float:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        return max(w, 0.0) * max(h, 0.0)


@dataclass
class PatchGrid:
    rows: int
    cols: int
    patch_size: int
    patches: np.ndarray  # (rows*cols, patch_size**2) flattened in raster order
    resized_height: int
    resized_width: int

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols


def text_extent(text: str, scale: int) -> tuple[int, int]:
    """Pixel (width, height) of rendered text: (6L-1)*s by 7*s."""
    return ((font5x7.ADVANCE * len(text) - 1) * scale, font5x7.GLYPH_HEIGHT * scale)


def render_text(canvas: Canvas, text: str, origin: tuple[int, int], scale: int) -> Box:
    """Rasterize `text` at pixel `origin`; returns the normalized metric box."""
    if not text:
        raise LayoutError("cannot render empty text")
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    missing = sorted({c for c in text if not font5x7.has_glyph(c)})
    if missing:
        raise LayoutError(f"no glyphs for characters {missing!r}")
    x, y = origin
    w, h = text_extent(text, scale)
    if x < 0 or y < 0 or x + w > canvas.width or y + h > canvas.height:
        raise LayoutError(
            f"text {text!r} at ({x}, {y}) scale {scale} overflows {canvas.width}x{canvas.height}"
        )
    for i, ch in enumerate(text):
        gx = x + i * font5x7.ADVANCE * scale
        for r, row in enumerate(font5x7.GLYPHS[ch]):
            for c, on in enumerate(row):
                if on:
                    py = y + r * scale
                    px = gx + c * scale
                    canvas.pixels[py : py + scale, px : px + scale] = INK
    return Box(x / canvas.width, y / canvas.height, (x + w) / canvas.width, (y + h) / canvas.height)


def _pixel_span(lo: float, hi: float, extent: int) -> tuple[int, int]:
    # pixels whose centers fall in the half-open normalized interval [lo, hi)
    start = math.ceil(lo * extent - 0.5)
    stop = math.ceil(hi * extent - 0.5)
    return max(start, 0), min(stop, extent)


def fill_rect(canvas: Canvas, box: Box, intensity: float = MASK_INTENSITY) -> Canvas:
    """Set every pixel whose center falls inside `box` to `intensity`."""
    if not (0.0 <= intensity <= 1.0):
        raise ValueError(f"intensity {intensity} outside [0, 1]")
    x_lo, x_hi = _pixel_span(box.x0, box.x1, canvas.width)
    y_lo, y_hi = _pixel_span(box.y0, box.y1, canvas.height)
    if x_lo < x_hi and y_lo < y_hi:
        canvas.pixels[y_lo:y_hi, x_lo:x_hi] = intensity
    return canvas


def select_grid(height: int, width: int, budget: int) -> tuple[int, int]:
    """Pick (rows, cols) with rows*cols <= budget: maximize patch count, then
    minimize aspect-ratio distortion |log((rows/cols)/(H/W))|, then rows."""
    aspect = height / width
    best = None
    best_key = None
    for rows in range(1, budget + 1):
        for cols in range(1, budget // rows + 1):
            key = (-(rows * cols), abs(math.log((rows / cols) / aspect)), rows)
            if best_key is None or key < best_key:
                best_key = key
                best = (rows, cols)
    return best


def variable_resolution_patchify(canvas: Canvas, patch_size: int, budget: int) -> PatchGrid:
    """Resize to the selected grid and emit flattened patches in raster order."""
    if patch_size < 2:
        raise ValueError(f"patch_size must be >= 2, got {patch_size}")
    if budget < 1:
        raise ValueError(f"patch budget must be >= 1, got {budget}")
    rows, cols = select_grid(canvas.height, canvas.width, budget)
    rh, rw = rows * patch_size, cols * patch_size
    resized = bilinear_resize(canvas.pixels, rh, rw)
    patches = (
        resized.reshape(rows, patch_size, cols, patch_size)
        .transpose(0, 2, 1, 3)
        .reshape(rows * cols, patch_size * patch_size)
    )
    return PatchGrid(rows, cols, patch_size, np.ascontiguousarray(patches), rh, rw)


def patch_index_of_point(pt: tuple[float, float], grid: PatchGrid) -> int:
    """Index (raster order) of the patch containing a normalized point."""
    x, y = pt
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"point ({x}, {y}) outside the unit square")
    row = min(int(y * grid.rows), grid.rows - 1)
    col = min(int(x * grid.cols), grid.cols - 1)
    return row * grid.cols + col


def write_pgm(canvas: Canvas, path) -> None:
    """Binary PGM (P5, maxval 255); intensity quantized as round(255*value)."""
    header = f"P5\n{canvas.width} {canvas.height}\n255\n".encode("ascii")
    body = np.floor(canvas.pixels * 255.0 + 0.5).astype(np.uint8).tobytes()
    with open(path, "wb") as f:
        f.write(header + body)


def read_pgm(path) -> Canvas:
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM produced by this package")
    width, height = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ValueError(f"{path}: unsupported maxval {parts[2]!r}")
    data = np.frombuffer(parts[3][: width * height], dtype=np.uint8)
    if data.size != width * height:
        raise ValueError(f"{path}: truncated pixel payload")
    pixels = (data.astype(np.float64) / 255.0).reshape(height, width)
    return Canvas(width, height, pixels)
