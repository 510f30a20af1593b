"""Shared test oracles, implemented independently of the library internals.

Each helper recomputes a quantity the package produces, using the most naive
formulation available (double loops, scalar recursions, central differences)
so agreement is meaningful rather than tautological.
"""

from __future__ import annotations

import numpy as np

from fpad.imops import ImageBuffer


def make_image(height: int, width: int, channels: int = 3, seed: int = 0) -> ImageBuffer:
    rng = np.random.default_rng(seed)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return ImageBuffer.from_array(rng.integers(0, 256, size=shape, dtype=np.uint8))


def finite_difference_gradient(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.abs(a - b).max()
    den = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(num / den)


def brute_force_laplacian_variance(gray: np.ndarray) -> float:
    """Interior-pixel 4-neighbour Laplacian variance via explicit loops."""
    h, w = gray.shape
    vals = []
    g = gray.astype(np.int64)
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            vals.append(
                g[y - 1, x] + g[y + 1, x] + g[y, x - 1] + g[y, x + 1] - 4 * g[y, x]
            )
    arr = np.asarray(vals, dtype=np.int64)
    return float(np.mean((arr - arr.mean()) ** 2))


def naive_report_counts(samples, threshold: float):
    """Recount every classification decision with plain comparisons.

    Returns ({species_name: (n, mis)}, n_live, live_mis).
    """
    per_species: dict[str, list[int]] = {}
    n_live = 0
    live_mis = 0
    for s in samples:
        if s.species.name == "LIVE":
            n_live += 1
            if s.score >= threshold:
                live_mis += 1
        else:
            n, mis = per_species.get(s.species.name, (0, 0))
            n += 1
            if s.score < threshold:
                mis += 1
            per_species[s.species.name] = (n, mis)
    return per_species, n_live, live_mis


def naive_rates_at(samples, threshold: float):
    """(overall APCER %, BPCER %) by direct counting, all species pooled."""
    attacks = [s for s in samples if s.species.name != "LIVE"]
    lives = [s for s in samples if s.species.name == "LIVE"]
    apcer = 100.0 * sum(1 for s in attacks if s.score < threshold) / len(attacks)
    bpcer = 100.0 * sum(1 for s in lives if s.score >= threshold) / len(lives)
    return apcer, bpcer


def rotate_point(x: float, y: float, cx: float, cy: float, angle_deg: float):
    """Forward rotation of an (x, y) point about (cx, cy), mathematical CCW."""
    t = np.deg2rad(angle_deg)
    dx, dy = x - cx, y - cy
    return (
        cx + np.cos(t) * dx - np.sin(t) * dy,
        cy + np.sin(t) * dx + np.cos(t) * dy,
    )


def scalar_sgd_sequence(grads, lr, momentum, weight_decay, w0):
    """Reference momentum-SGD recursion on a single scalar weight."""
    w = float(w0)
    v = 0.0
    out = []
    for g in grads:
        g = g + weight_decay * w
        v = momentum * v + g
        w = w - lr * v
        out.append(w)
    return out


def bilinear_sample(arr: np.ndarray, y: float, x: float) -> float:
    """Clamped bilinear lookup on a single-channel float array."""
    h, w = arr.shape
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    top = arr[y0, x0] * (1 - fx) + arr[y0, x1] * fx
    bot = arr[y1, x0] * (1 - fx) + arr[y1, x1] * fx
    return top * (1 - fy) + bot * fy
