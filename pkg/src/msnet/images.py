"""Single-channel image container, PGM/PNG round trips, and resampling.

Pixels are float64 in [0, 1]; file formats quantize to 8 bits. All
resampling is bilinear with half-pixel centers so results are identical
across platforms and runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .errors import DataError


@dataclass
class GrayImage:
    """A grayscale slice with a physical ground resolution.

    pixels: (H, W) float64 array, every value in [0, 1].
    resolution: meters per pixel, strictly positive.
    """

    pixels: np.ndarray
    resolution: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"image must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("image contains non-finite pixels")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError(
                f"pixel values must lie in [0, 1], got range [{arr.min():.4g}, {arr.max():.4g}]"
            )
        if not (isinstance(self.resolution, (int, float)) and math.isfinite(self.resolution)
                and self.resolution > 0):
            raise DataError(f"resolution must be a positive number, got {self.resolution!r}")
        self.pixels = arr
        self.resolution = float(self.resolution)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------


def write_pgm(path, pixels: np.ndarray) -> None:
    """Write [0,1] floats as a binary (P5) PGM with maxval 255."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"PGM payload must be 2-D, got shape {arr.shape}")
    quant = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = quant.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + quant.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM back into [0,1] floats."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such image file: {path}")
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (missing P5 magic)")
    # header = magic, width, height, maxval; whitespace separated, # comments
    fields, pos = [], 2
    while len(fields) < 3:
        if pos >= len(raw):
            raise DataError(f"{path}: truncated PGM header")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            fields.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as e:
        raise DataError(f"{path}: malformed PGM header") from e
    if maxval != 255:
        raise DataError(f"{path}: unsupported PGM maxval {maxval}")
    data = raw[pos : pos + w * h]
    if len(data) != w * h:
        raise DataError(f"{path}: PGM payload truncated ({len(data)} of {w * h} bytes)")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def write_png(path, pixels: np.ndarray) -> None:
    """Write [0,1] floats as an 8-bit single-channel PNG."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"PNG payload must be 2-D, got shape {arr.shape}")
    quant = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    PilImage.fromarray(quant, mode="L").save(Path(path), format="PNG")


def read_png(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such image file: {path}")
    try:
        with PilImage.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except Exception as e:
        raise DataError(f"{path}: cannot decode PNG: {e}") from e
    return arr / 255.0


def read_image(path) -> np.ndarray:
    """Dispatch on extension: .pgm or .png."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    raise DataError(f"unsupported image format: {path}")


def write_image(path, pixels: np.ndarray) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, pixels)
    elif suffix == ".png":
        write_png(path, pixels)
    else:
        raise DataError(f"unsupported image format: {path}")


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize with bilinear sampling at half-pixel-aligned centers."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    if (out_h, out_w) == (h, w):
        return arr.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = arr[np.ix_(y0, x0)] * (1 - fx) + arr[np.ix_(y0, x1)] * fx
    bot = arr[np.ix_(y1, x0)] * (1 - fx) + arr[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def rotate_bilinear(arr: np.ndarray, angle_rad: float, fill: float = 0.0) -> np.ndarray:
    """Rotate about the image center; samples outside the source get ``fill``."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    # inverse rotation of destination coordinates into the source frame
    dy, dx = yy - cy, xx - cx
    sy = c * dy + s * dx + cy
    sx = -s * dy + c * dx + cx
    # epsilon keeps exact quarter/half turns from dropping border pixels
    # to rounding noise in cos/sin
    eps = 1e-9
    inside = (sy >= -eps) & (sy <= h - 1 + eps) & (sx >= -eps) & (sx <= w - 1 + eps)
    sy_c = np.clip(sy, 0, h - 1)
    sx_c = np.clip(sx, 0, w - 1)
    y0 = np.floor(sy_c).astype(int)
    x0 = np.floor(sx_c).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = sy_c - y0
    fx = sx_c - x0
    val = (arr[y0, x0] * (1 - fy) * (1 - fx) + arr[y0, x1] * (1 - fy) * fx
           + arr[y1, x0] * fy * (1 - fx) + arr[y1, x1] * fy * fx)
    return np.where(inside, val, fill)


def gaussian_blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with reflected borders."""
    arr = np.asarray(arr, dtype=np.float64)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    # reflect padding cannot exceed extent-1, so clamp the nominal 4-sigma radius
    radius = max(1, min(int(round(4.0 * sigma)), min(arr.shape) - 1))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()

    def along_rows(a):
        padded = np.pad(a, ((radius, radius), (0, 0)), mode="reflect")
        win = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1, axis=0)
        return np.einsum("hwk,k->hw", win, kernel)

    return along_rows(along_rows(arr).T).T
