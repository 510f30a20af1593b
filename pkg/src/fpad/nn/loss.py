"""Binary cross-entropy, plain and fused with the sigmoid.

Spoof is the positive class (label 1). The fused form computes loss and
logit gradient without ever materializing extreme probabilities.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

CLAMP = 1e-7


def bce_loss(probabilities: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean BCE over the batch plus the gradient w.r.t. the probabilities.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs; the
    gradient is of the clamped expression (zero sensitivity inside the clamp
    region exactly at the rails).
    """
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError("bce_loss", f"probabilities {p.shape} vs labels {y.shape}")
    if p.size == 0:
        raise ShapeError("bce_loss", "empty batch")
    pc = np.clip(p, CLAMP, 1.0 - CLAMP)
    loss = float(np.mean(-(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))))
    inside = (p > CLAMP) & (p < 1.0 - CLAMP)
    grad = np.where(inside, (-(y / pc) + (1.0 - y) / (1.0 - pc)) / p.size, 0.0)
    return loss, grad


def sigmoid_bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Numerically stable mean BCE on logits; gradient is (sigmoid(z) - y)/N."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeError("sigmoid_bce_with_logits", f"logits {z.shape} vs labels {y.shape}")
    if z.size == 0:
        raise ShapeError("sigmoid_bce_with_logits", "empty batch")
    # max(z,0) - z*y + log(1 + exp(-|z|)) is exact for either sign of z
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    p = np.empty_like(z)
    pos = z >= 0
    p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    p[~pos] = ez / (1.0 + ez)
    grad = (p - y) / z.size
    return loss, grad
