"""Patch extraction from fingertip crops, training-time augmentation, and a
procedural ridge-texture dataset generator for end-to-end runs without any
captured data.

All randomness flows through numpy Generators seeded via stable_seed so that
every output is reproducible from (seed, record id) alone, independent of
manifest ordering or filesystem iteration order.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import imops
from .errors import PatchError
from .registry import (
    Finger,
    Hand,
    Kind,
    Manifest,
    SampleRecord,
    Species,
    Split,
    record_id,
)

log = logging.getLogger(__name__)

# Patches sampled per fingertip, per species. Heavier sampling where the
# material produces more usable surface area.
DEFAULT_PATCH_COUNTS = {
    Species.LIVE: 4,
    Species.ECOFLEX_LAYOVER: 4,
    Species.PLAYDOH_LAYOVER: 4,
    Species.WOOD_GLUE_LAYOVER: 7,
    Species.SYNTHETIC_FINGERTIP: 1,
    Species.PRINTED_PHOTO: 2,
    Species.LATEX_LAYOVER: 5,
}

DEFAULT_PATCH_SIZE = 256


def stable_seed(*parts) -> int:
    """64-bit seed derived from the parts; identical across runs and machines."""
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


@dataclass(frozen=True)
class PatchSpec:
    patch_size: int = DEFAULT_PATCH_SIZE
    counts: dict = field(default_factory=lambda: dict(DEFAULT_PATCH_COUNTS))
    seed: int = 0

    def count_for(self, species: Species) -> int:
        return self.counts.get(species, 1)


def middle_window(dim: int, patch_size: int) -> tuple[int, int]:
    """Half-open offset range [lo, hi) covering the middle of one axis.

    The full offset range is [0, M] with M = dim - patch_size; the window
    keeps offsets in [ceil(M/4), floor(3M/4)]. For M = 1 that interval is
    empty, so the window widens to {0}.
    """
    if patch_size <= 0:
        raise PatchError(f"patch_size must be positive, got {patch_size}")
    if dim < patch_size:
        raise PatchError(f"image dimension {dim} smaller than patch size {patch_size}")
    m = dim - patch_size
    if m == 0:
        return 0, 1
    lo = math.ceil(m / 4)
    hi = math.floor(3 * m / 4)
    if lo > hi:
        return 0, 1
    return lo, hi + 1


def extract_center_patches(
    img: imops.ImageBuffer, spec: PatchSpec, species: Species, seed: Optional[int] = None
) -> list[imops.ImageBuffer]:
    """Random square patches from the middle window of the image.

    Offsets are drawn top then left for each patch in order, from
    default_rng(seed if given else spec.seed).
    """
    n = spec.count_for(species)
    y_lo, y_hi = middle_window(img.height, spec.patch_size)
    x_lo, x_hi = middle_window(img.width, spec.patch_size)
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    patches = []
    for _ in range(n):
        top = int(rng.integers(y_lo, y_hi))
        left = int(rng.integers(x_lo, x_hi))
        patches.append(imops.crop(img, left, top, spec.patch_size, spec.patch_size))
    return patches


@dataclass(frozen=True)
class AugmentSpec:
    max_rotation: float = 45.0
    flip_probability: float = 0.5
    zoom_range: float = 0.1
    seed: int = 0


def _fold_reflect(coords: np.ndarray, n: int) -> np.ndarray:
    """Reflect out-of-range coordinates back into [0, n-1] without repeating
    the border sample (..., 2, 1, 0, 1, 2, ...)."""
    if n == 1:
        return np.zeros_like(coords)
    period = 2.0 * (n - 1)
    half = period / 2.0
    return half - np.abs(np.mod(coords, period) - half)


def rotate(arr: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate about the image center by angle_deg (counterclockwise in image
    axes), bilinear, out-of-frame samples reflected. angle 0 is identity."""
    if angle_deg == 0.0:
        return arr
    h, w = arr.shape[:2]
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = ys - cy, xs - cx
    # inverse map: output pixel pulls from input rotated by -angle
    src_y = cy + cos_t * dy + sin_t * dx
    src_x = cx - sin_t * dy + cos_t * dx
    src_y = _fold_reflect(src_y, h)
    src_x = _fold_reflect(src_x, w)
    y0 = np.clip(np.floor(src_y).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(src_x).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0)[..., None] if arr.ndim == 3 else src_y - y0
    fx = (src_x - x0)[..., None] if arr.ndim == 3 else src_x - x0
    a = arr.astype(np.float64)
    top = a[y0, x0] * (1.0 - fx) + a[y0, x1] * fx
    bot = a[y1, x0] * (1.0 - fx) + a[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def _zoom(arr: np.ndarray, scale: float) -> np.ndarray:
    """Center-anchored zoom. scale > 1 magnifies (resize up, center-crop);
    scale < 1 shrinks (resize down, reflect-pad back). scale 1 is identity."""
    if scale == 1.0:
        return arr
    h, w = arr.shape[:2]
    nh = max(1, int(np.floor(h * scale + 0.5)))
    nw = max(1, int(np.floor(w * scale + 0.5)))
    img = imops.ImageBuffer.from_array(arr if arr.ndim == 3 else arr[..., None])
    scaled = imops.resize(img, nw, nh).pixels
    if arr.ndim == 2:
        scaled = scaled[..., 0]
    if nh >= h and nw >= w:
        top = (nh - h) // 2
        left = (nw - w) // 2
        return scaled[top : top + h, left : left + w]
    # pad the short axes with reflection, crop any long axis
    if nh > h:
        top = (nh - h) // 2
        scaled = scaled[top : top + h]
        nh = h
    if nw > w:
        left = (nw - w) // 2
        scaled = scaled[:, left : left + w]
        nw = w
    pad_top = (h - nh) // 2
    pad_bottom = h - nh - pad_top
    pad_left = (w - nw) // 2
    pad_right = w - nw - pad_left
    pads = [(pad_top, pad_bottom), (pad_left, pad_right)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(scaled, pads, mode="reflect")


def augment(img: imops.ImageBuffer, spec: AugmentSpec, seed: Optional[int] = None) -> imops.ImageBuffer:
    """One random augmentation pass: zoom, then rotation, then horizontal flip.

    Draw order from default_rng(seed if given else spec.seed): angle uniform
    in [-max_rotation, +max_rotation], flip uniform in [0,1) against
    flip_probability, zoom factor uniform in [1-zoom_range, 1+zoom_range].
    Degenerate parameters short-circuit to the identity, bit for bit.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    angle = float(rng.uniform(-spec.max_rotation, spec.max_rotation)) if spec.max_rotation > 0 else 0.0
    flip_u = float(rng.uniform())
    do_flip = flip_u < spec.flip_probability
    scale = float(rng.uniform(1.0 - spec.zoom_range, 1.0 + spec.zoom_range)) if spec.zoom_range > 0 else 1.0

    arr = img.pixels
    out = _zoom(arr, scale)
    out = rotate(out, angle)
    if do_flip:
        out = out[:, ::-1]
    if out is arr:
        return img
    return imops.ImageBuffer.from_array(np.ascontiguousarray(out))


def patchify_manifest(
    manifest: Manifest,
    spec: PatchSpec,
    out_dir="patches",
) -> list[SampleRecord]:
    """Extract patches for every SingleFingertip record not marked rejected.

    Patch k of parent p is written to <out_dir>/<species>/<p.id>_<k>.png under
    the manifest root, recorded with kind Patch and parent_id p.id. Per-image
    randomness comes from stable_seed(spec.seed, parent id), so adding or
    removing other records never changes a given parent's patches. Existing
    patch records for a parent are replaced (idempotent reruns).
    """
    out_root = manifest.root / out_dir
    new_records = []
    parents = [
        r for r in manifest.records
        if r.kind is Kind.SINGLE_FINGERTIP and r.quality != "rejected"
    ]
    parents.sort(key=lambda r: r.id)
    for parent in parents:
        img = imops.load_png(manifest.root / parent.path)
        seed = stable_seed(spec.seed, parent.id)
        patches = extract_center_patches(img, spec, parent.species, seed=seed)
        for k, patch in enumerate(patches):
            rel = f"{out_dir}/{parent.species.value}/{parent.id}_{k}.png"
            imops.save_png(patch, manifest.root / rel)
            new_records.append(
                SampleRecord(
                    id=record_id(rel, parent.species),
                    subject_id=parent.subject_id,
                    session=parent.session,
                    hand=parent.hand,
                    finger=parent.finger,
                    species=parent.species,
                    sensor=parent.sensor,
                    kind=Kind.PATCH,
                    path=rel,
                    split=parent.split,
                    parent_id=parent.id,
                )
            )
    manifest.upsert(new_records)
    manifest.save()
    log.info("patchify done parents=%d patches=%d", len(parents), len(new_records))
    return new_records


# --- procedural dataset ----------------------------------------------------

_TINT = np.array([1.0, 0.82, 0.72])  # skin-ish channel scaling


def _box_blur3(gray: np.ndarray) -> np.ndarray:
    padded = np.pad(gray, 1, mode="edge")
    out = np.zeros_like(gray, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy : dy + gray.shape[0], dx : dx + gray.shape[1]]
    return out / 9.0


def _ridge_texture(rng: np.random.Generator, size: int, live: bool) -> np.ndarray:
    """Oriented sinusoidal ridge pattern. Spoofs get flattened contrast,
    specular blobs, level quantization, and a material-smoothing blur; live
    textures keep full ridge amplitude plus fine sensor noise."""
    theta = float(rng.uniform(0.0, math.pi))
    freq = float(rng.uniform(0.12, 0.3))
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    t = (xs * math.cos(theta) + ys * math.sin(theta)) * freq + phase
    ridges = np.sin(t)
    base = 120.0 + float(rng.uniform(-15.0, 15.0))
    if live:
        amp = float(rng.uniform(70.0, 95.0))
        gray = base + amp * ridges + rng.normal(0.0, 5.0, ridges.shape)
    else:
        amp = float(rng.uniform(70.0, 95.0)) * float(rng.uniform(0.28, 0.42))
        gray = base + amp * ridges
        for _ in range(int(rng.integers(2, 6))):
            cy = float(rng.uniform(0.2, 0.8)) * size
            cx = float(rng.uniform(0.2, 0.8)) * size
            sigma = float(rng.uniform(0.05, 0.12)) * size
            blob = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma**2))
            gray = gray + 60.0 * blob
        step = float(rng.uniform(18.0, 26.0))
        gray = _box_blur3(np.floor(gray / step) * step)
    rgb = gray[..., None] * _TINT[None, None, :]
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def generate_procedural_dataset(
    manifest: Manifest,
    n_live: int,
    n_spoof: int,
    spoof_species: Species = Species.ECOFLEX_LAYOVER,
    image_size: int = 32,
    seed: int = 0,
    out_dir: str = "synthetic",
    kind: Kind = Kind.PATCH,
) -> list[SampleRecord]:
    """Generate a labeled two-class image set under the manifest root.

    Records default to kind Patch (training-ready) across 10 round-robin
    subjects, split Unassigned. Each image is seeded by
    stable_seed(seed, species, index), so the corpus is byte-identical across
    runs and machines and per-image content never depends on the other
    images requested.
    """
    if spoof_species is Species.LIVE:
        raise PatchError("spoof_species must be an attack species")
    new_records = []
    jobs = [(Species.LIVE, i, True) for i in range(n_live)]
    jobs += [(spoof_species, i, False) for i in range(n_spoof)]
    for species, i, live in jobs:
        rng = np.random.default_rng(stable_seed(seed, species.value, i))
        arr = _ridge_texture(rng, image_size, live)
        rel = f"{out_dir}/{species.value}/{i:05d}.png"
        imops.save_png(imops.ImageBuffer.from_array(arr), manifest.root / rel)
        new_records.append(
            SampleRecord(
                id=record_id(rel, species),
                subject_id=f"synth{i % 10:02d}",
                session=1,
                hand=Hand.NOT_APPLICABLE,
                finger=Finger.NOT_APPLICABLE,
                species=species,
                sensor="procedural",
                kind=kind,
                path=rel,
            )
        )
    manifest.upsert(new_records)
    manifest.save()
    log.info("synth-gen done live=%d spoof=%d size=%d", n_live, n_spoof, image_size)
    return new_records
