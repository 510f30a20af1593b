"""Report figures rendered straight to PNG files (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .imops import BlurReport
from .metrics import EvalReport, ScoredSample, sweep_rates
from .registry import Species


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def save_blur_curve(report: BlurReport, path) -> Path:
    """Sorted sharpness scores with the removal threshold marked."""
    scores = np.sort(np.asarray([value for _, value in report.scores]))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, scores.size + 1), scores, color="tab:blue", lw=1.5)
    if np.isfinite(report.threshold):
        ax.axhline(report.threshold, color="tab:red", ls="--", lw=1.0,
                   label=f"threshold {report.threshold:.1f}")
        ax.legend(loc="upper left")
    ax.set_xlabel("image rank")
    ax.set_ylabel("Laplacian variance")
    ax.set_title(f"Sharpness distribution (removing {100 * report.removed_fraction:.1f}%)")
    return _save(fig, path)


def save_training_history(history: Sequence, path) -> Path:
    """Train loss and validation accuracy per epoch on twin axes."""
    epochs = [h.epoch for h in history]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(epochs, [h.train_loss for h in history], color="tab:blue", lw=1.5, label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [h.val_accuracy for h in history], color="tab:orange", lw=1.5,
             label="val accuracy")
    ax2.set_ylabel("validation accuracy", color="tab:orange")
    ax2.set_ylim(0.0, 1.05)
    ax1.set_title("Training history")
    return _save(fig, path)


def save_score_histogram(scored: Sequence[ScoredSample], threshold: float, path) -> Path:
    """Score distributions for live vs attack samples with the threshold."""
    live = [s.score for s in scored if s.species is Species.LIVE]
    attack = [s.score for s in scored if s.species is not Species.LIVE]
    bins = np.linspace(0.0, 1.0, 41)
    fig, ax = plt.subplots(figsize=(6, 4))
    if live:
        ax.hist(live, bins=bins, alpha=0.6, color="tab:green", label=f"live (n={len(live)})")
    if attack:
        ax.hist(attack, bins=bins, alpha=0.6, color="tab:red", label=f"attack (n={len(attack)})")
    ax.axvline(threshold, color="black", ls="--", lw=1.0, label=f"threshold {threshold:g}")
    ax.set_xlabel("spoof score")
    ax.set_ylabel("count")
    ax.set_title("Score distribution")
    ax.legend(loc="upper center")
    return _save(fig, path)


def save_det_curve(scored: Sequence[ScoredSample], path) -> Path:
    """Overall APCER vs BPCER across the threshold sweep."""
    rates = sweep_rates(scored)
    apcer = [r[1] for r in rates]
    bpcer = [r[2] for r in rates]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(apcer, bpcer, color="tab:blue", lw=1.5)
    lim = max(max(apcer), max(bpcer), 1.0)
    ax.plot([0, lim], [0, lim], color="gray", ls=":", lw=1.0)
    ax.set_xlabel("APCER %")
    ax.set_ylabel("BPCER %")
    ax.set_title("Detection error tradeoff")
    return _save(fig, path)


def save_apcer_bars(report: EvalReport, path) -> Path:
    """Per-species APCER bars (unknown species hatched) plus BPCER."""
    labels = []
    values = []
    hatches = []
    for r in report.species_results:
        labels.append(f"{r.species.code}\n{'unknown' if not r.known else 'known'}")
        values.append(r.apcer)
        hatches.append("//" if not r.known else "")
    if report.bpcer is not None:
        labels.append("BPCER")
        values.append(report.bpcer)
        hatches.append("")
    fig, ax = plt.subplots(figsize=(max(4.0, 1.0 + 0.9 * len(labels)), 4))
    bars = ax.bar(labels, values, color="tab:red")
    for bar, hatch in zip(bars, hatches):
        bar.set_hatch(hatch)
    if values:
        ax.bar_label(bars, fmt="%.2f", padding=2)
    ax.set_ylabel("error rate %")
    ax.set_title(f"Error rates at threshold {report.threshold:g}")
    return _save(fig, path)
