"""Pixel-level primitives: PNG I/O, grayscale, Laplacian blur scoring,
quantile threshold selection, and bilinear resizing.

All functions are pure and operate on immutable ImageBuffer values, so they
are safe to call from any number of workers. Arithmetic conventions (luma
weights, interior-only Laplacian, population variance, half-pixel-center
bilinear sampling) are fixed here so test oracles can reproduce results
bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import DimensionError, ImageFormatError

# ITU-R BT.601 luma weights.
LUMA_R = 0.299
LUMA_G = 0.587
LUMA_B = 0.114


@dataclass(frozen=True)
class ImageBuffer:
    """8-bit raster, shape (height, width, channels) with channels in {1, 3}.

    The pixel array is stored as a read-only view; treat buffers as values.
    """

    pixels: np.ndarray

    def __post_init__(self):
        a = self.pixels
        if a.ndim != 3:
            raise ImageFormatError(f"expected (H, W, C) array, got shape {a.shape}")
        if a.dtype != np.uint8:
            raise ImageFormatError(f"expected uint8 samples, got {a.dtype}")
        if a.shape[2] not in (1, 3):
            raise ImageFormatError(f"channels must be 1 or 3, got {a.shape[2]}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise DimensionError(f"width and height must be >= 1, got {a.shape[1]}x{a.shape[0]}")
        view = np.ascontiguousarray(a).view()
        view.setflags(write=False)
        object.__setattr__(self, "pixels", view)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        return cls(np.asarray(arr, dtype=np.uint8))


def load_png(path) -> ImageBuffer:
    """Decode an 8-bit grayscale or RGB PNG. Other modes are rejected."""
    try:
        ctx = Image.open(path)
    except FileNotFoundError:
        raise
    except (Image.UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageFormatError(f"{path}: not a decodable image ({exc})") from exc
    with ctx as im:
        if im.format != "PNG":
            raise ImageFormatError(f"{path}: expected PNG, got {im.format}")
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.uint8)[:, :, np.newaxis]
        elif im.mode == "RGB":
            arr = np.asarray(im, dtype=np.uint8)
        else:
            raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode} (need L or RGB)")
    return ImageBuffer(arr)


def save_png(img: ImageBuffer, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if img.channels == 1:
        pil = Image.fromarray(img.pixels[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(img.pixels, mode="RGB")
    pil.save(path, format="PNG")


def png_dimensions(path) -> tuple[int, int]:
    """(width, height) from the PNG header without decoding pixel data."""
    with Image.open(path) as im:
        return im.size


def _round_half_up(a: np.ndarray) -> np.ndarray:
    return np.floor(a + 0.5)


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """BT.601 luma conversion; identity for 1-channel input."""
    if img.channels == 1:
        return img
    rgb = img.pixels.astype(np.float64)
    luma = LUMA_R * rgb[:, :, 0] + LUMA_G * rgb[:, :, 1] + LUMA_B * rgb[:, :, 2]
    gray = np.clip(_round_half_up(luma), 0, 255).astype(np.uint8)
    return ImageBuffer(gray[:, :, np.newaxis])


def laplacian_variance(img: ImageBuffer) -> float:
    """Population variance of the 4-neighbor Laplacian over interior pixels.

    The 1-pixel border is excluded, so no padding policy is involved; the
    per-pixel responses are integer-exact.
    """
    if img.channels != 1:
        raise ImageFormatError("laplacian_variance needs a 1-channel image")
    if img.height < 3 or img.width < 3:
        raise DimensionError(
            f"image must be at least 3x3 for Laplacian scoring, got {img.width}x{img.height}"
        )
    a = img.pixels[:, :, 0].astype(np.int64)
    resp = a[:-2, 1:-1] + a[2:, 1:-1] + a[1:-1, :-2] + a[1:-1, 2:] - 4 * a[1:-1, 1:-1]
    return float(np.var(resp))


def select_blur_threshold(scores: Sequence[float], removal_fraction: float) -> float:
    """Smallest score-set value t (or +inf) with |{s < t}| / N >= removal_fraction.

    Applying t removes the smallest achievable fraction at or above the
    requested one; removal_fraction=0 returns min(scores), which removes
    nothing under the strict-less rule.
    """
    arr = np.sort(np.asarray(list(scores), dtype=np.float64))
    if arr.size == 0:
        raise ValueError("scores must be nonempty")
    if not 0.0 <= removal_fraction <= 1.0:
        raise ValueError(f"removal_fraction must be in [0, 1], got {removal_fraction}")
    n = arr.size
    for t in np.unique(arr):
        below = int(np.searchsorted(arr, t, side="left"))
        if below / n >= removal_fraction:
            return float(t)
    return math.inf


def removed_fraction(scores: Sequence[float], threshold: float) -> float:
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("scores must be nonempty")
    return int(np.count_nonzero(arr < threshold)) / arr.size


@dataclass(frozen=True)
class BlurReport:
    """Per-record blur scores plus the threshold chosen from them."""

    scores: tuple[tuple[str, float], ...]
    threshold: float
    removed_fraction: float

    @classmethod
    def build(cls, scores: Iterable[tuple[str, float]], threshold: float) -> "BlurReport":
        pairs = tuple(scores)
        frac = removed_fraction([s for _, s in pairs], threshold)
        return cls(scores=pairs, threshold=threshold, removed_fraction=frac)

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["record_id", "score"])
            for record_id, score in self.scores:
                writer.writerow([record_id, repr(score)])

    def write_sidecar(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "threshold": self.threshold,
            "removed_fraction": self.removed_fraction,
            "n": len(self.scores),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def _axis_coords(n_src: int, n_dst: int):
    # Half-pixel centers with edge clamping; exact identity when n_src == n_dst.
    pos = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    i0 = np.clip(lo, 0, n_src - 1).astype(np.int64)
    i1 = np.clip(lo + 1, 0, n_src - 1).astype(np.int64)
    return i0, i1, frac


def resize(img: ImageBuffer, new_width: int, new_height: int) -> ImageBuffer:
    """Bilinear resize with clamped edges, each channel independent."""
    if new_width < 1 or new_height < 1:
        raise DimensionError(f"target dimensions must be >= 1, got {new_width}x{new_height}")
    if new_width == img.width and new_height == img.height:
        return img
    x0, x1, fx = _axis_coords(img.width, new_width)
    y0, y1, fy = _axis_coords(img.height, new_height)
    src = img.pixels.astype(np.float64)
    rows = src[y0] * (1.0 - fy)[:, None, None] + src[y1] * fy[:, None, None]
    out = rows[:, x0] * (1.0 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]
    out = np.clip(_round_half_up(out), 0, 255).astype(np.uint8)
    return ImageBuffer(out)


def conditional_downsample(img: ImageBuffer, dim_threshold: int) -> ImageBuffer:
    """Shrink by 20% when both dimensions exceed dim_threshold, else no-op."""
    if dim_threshold < 1:
        raise DimensionError(f"dim_threshold must be >= 1, got {dim_threshold}")
    if min(img.width, img.height) <= dim_threshold:
        return img
    new_w = int(_round_half_up(np.float64(0.8 * img.width)))
    new_h = int(_round_half_up(np.float64(0.8 * img.height)))
    return resize(img, new_w, new_h)


def propose_downsample_threshold(dims: Iterable[tuple[int, int]]) -> int:
    """Median of min(width, height), the per-species threshold heuristic."""
    mins = [min(w, h) for w, h in dims]
    if not mins:
        raise ValueError("no dimensions given")
    return int(_round_half_up(np.float64(np.median(mins))))


def crop(img: ImageBuffer, x: int, y: int, w: int, h: int) -> ImageBuffer:
    """Sub-rectangle with exclusive right/bottom edges."""
    if w < 1 or h < 1:
        raise DimensionError(f"crop size must be >= 1, got {w}x{h}")
    if x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise DimensionError(
            f"crop {w}x{h}+{x}+{y} exceeds image bounds {img.width}x{img.height}"
        )
    return ImageBuffer(img.pixels[y : y + h, x : x + w].copy())
