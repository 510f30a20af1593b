"""Training loop and scoring for the live/spoof classifier.

Preprocessing order everywhere (train and score identically): grayscale
conversion when configured, optional resize, augmentation (training only),
then scale to float32 in [0,1] and transpose to CHW.

Determinism: record selection sorts by record id; the epoch shuffle is keyed
by (seed, epoch) and augmentation draws by (seed, epoch, record id). Records
that never enter a split therefore cannot perturb anything trained on the
others. Datasets are loaded once into memory; this is a desk-scale trainer.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import imops
from .errors import ConfigError, TrainingError
from .metrics import ScoredSample
from .model import DenseNet, DenseNetConfig, TINY, build_model
from .nn import SGD, sigmoid_bce_with_logits
from .patches import AugmentSpec, augment, stable_seed
from .registry import (
    Kind,
    Manifest,
    QUALITY_REJECTED,
    SampleRecord,
    Species,
    Split,
    UNKNOWN_PAI_SPECIES,
)

log = logging.getLogger(__name__)


class ColorMode(Enum):
    RGB = "rgb"
    GRAYSCALE = "grayscale"


@dataclass(frozen=True)
class TrainConfig:
    model: DenseNetConfig = TINY
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    milestones: tuple = (0.5, 0.75)
    lr_decay: float = 0.1
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    seed: int = 0
    color_mode: ColorMode = ColorMode.RGB
    resize_to: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum}")
        if any(not 0.0 <= m <= 1.0 for m in self.milestones):
            raise ConfigError(f"milestones are epoch fractions in [0,1], got {self.milestones}")
        if self.resize_to is not None and self.resize_to < 1:
            raise ConfigError(f"resize_to must be >= 1, got {self.resize_to}")
        expected = 1 if self.color_mode is ColorMode.GRAYSCALE else 3
        if self.model.input_channels != expected:
            raise ConfigError(
                f"model expects {self.model.input_channels} channels but color_mode "
                f"{self.color_mode.value} produces {expected}"
            )


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float
    lr: float

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def preprocess(
    img: imops.ImageBuffer,
    color_mode: ColorMode,
    resize_to: Optional[int],
    augment_spec: Optional[AugmentSpec] = None,
    augment_seed: Optional[int] = None,
) -> np.ndarray:
    """uint8 image -> float32 CHW in [0,1], applying the configured chain."""
    if color_mode is ColorMode.GRAYSCALE:
        img = imops.to_grayscale(img)
    if resize_to is not None:
        if resize_to > img.height or resize_to > img.width:
            raise ConfigError(
                f"resize_to {resize_to} exceeds image {img.height}x{img.width}; "
                "resize must not upsample patches"
            )
        img = imops.resize(img, resize_to, resize_to)
    if augment_spec is not None:
        img = augment(img, augment_spec, seed=augment_seed)
    return _normalize(img)


def _normalize(img: imops.ImageBuffer) -> np.ndarray:
    arr = img.pixels.astype(np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def _training_records(manifest: Manifest, split: Split) -> list[SampleRecord]:
    records = [
        r
        for r in manifest.records
        if r.split is split and r.kind is Kind.PATCH and r.quality != QUALITY_REJECTED
    ]
    records.sort(key=lambda r: r.id)
    return records


def _label(record: SampleRecord) -> float:
    return 0.0 if record.species is Species.LIVE else 1.0


def _load_images(manifest: Manifest, records, color_mode, resize_to) -> dict[str, imops.ImageBuffer]:
    out = {}
    for rec in records:
        img = imops.load_png(manifest.root / rec.path)
        if color_mode is ColorMode.GRAYSCALE:
            img = imops.to_grayscale(img)
        if resize_to is not None:
            if resize_to > img.height or resize_to > img.width:
                raise ConfigError(
                    f"resize_to {resize_to} exceeds image {img.height}x{img.width}"
                )
            img = imops.resize(img, resize_to, resize_to)
        out[rec.id] = img
    return out


def _forward_scores(model: DenseNet, images: list[np.ndarray], batch_size: int) -> np.ndarray:
    scores = []
    for start in range(0, len(images), batch_size):
        batch = np.stack(images[start : start + batch_size])
        scores.append(model.forward(batch))
    return np.concatenate(scores) if scores else np.empty(0, dtype=np.float32)


def train(config: TrainConfig, manifest: Manifest) -> tuple[DenseNet, list[EpochStats]]:
    """Train from scratch on the manifest's Train patches, validating each
    epoch; returns the model restored to its best-validation weights plus the
    per-epoch history."""
    model = build_model(config.model, seed=config.seed)
    if config.epochs == 0:
        return model, []

    train_records = _training_records(manifest, Split.TRAIN)
    val_records = _training_records(manifest, Split.VALIDATION)
    if not train_records:
        raise TrainingError("training split has no patches")
    if not val_records:
        raise TrainingError("validation split has no patches")
    for rec in train_records + val_records:
        if rec.species in UNKNOWN_PAI_SPECIES:
            raise TrainingError(
                f"unknown-PAI species {rec.species.value} present in {rec.split.value} "
                f"(record {rec.id})"
            )

    labels_all = np.array([_label(r) for r in train_records])
    pos_frac = float(labels_all.mean())
    if 0.0 < min(pos_frac, 1.0 - pos_frac) < 0.05:
        log.warning(
            "label imbalance: positive fraction %.3f over %d training patches",
            pos_frac,
            len(train_records),
        )

    cache = _load_images(manifest, train_records + val_records, config.color_mode, config.resize_to)
    val_images = [_normalize(cache[r.id]) for r in val_records]
    val_labels = np.array([_label(r) for r in val_records])

    opt = SGD(
        model.parameters(),
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    milestone_epochs = sorted(int(np.floor(m * config.epochs)) for m in config.milestones)

    history: list[EpochStats] = []
    best_accuracy = -1.0
    best_state: Optional[list[np.ndarray]] = None
    state_tensors = model.parameters() + model.buffers()

    for epoch in range(config.epochs):
        lr = config.lr * config.lr_decay ** sum(1 for m in milestone_epochs if epoch >= m)
        opt.lr = lr
        model.train()
        order = np.random.default_rng(stable_seed(config.seed, "shuffle", epoch)).permutation(
            len(train_records)
        )
        loss_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch_records = [train_records[i] for i in idx]
            # cache already holds the color/resize result; only augment here
            batch = np.stack(
                [
                    _normalize(
                        augment(
                            cache[r.id],
                            config.augment,
                            seed=stable_seed(config.seed, "augment", epoch, r.id),
                        )
                    )
                    for r in batch_records
                ]
            )
            labels = np.array([_label(r) for r in batch_records])
            logits = model.forward_logits(batch)
            loss, grad = sigmoid_bce_with_logits(logits, labels)
            opt.zero_grad()
            model.backward(grad)
            opt.step()
            loss_sum += loss * len(batch_records)
        train_loss = loss_sum / len(train_records)

        model.eval()
        val_scores = _forward_scores(model, val_images, config.batch_size)
        val_accuracy = float(np.mean((val_scores >= 0.5) == (val_labels == 1.0)))
        history.append(
            EpochStats(epoch=epoch, train_loss=float(train_loss), val_accuracy=val_accuracy, lr=lr)
        )
        log.info(
            "epoch=%d lr=%.4g train_loss=%.4f val_accuracy=%.4f",
            epoch,
            lr,
            train_loss,
            val_accuracy,
        )
        if val_accuracy > best_accuracy:
            best_accuracy = val_accuracy
            best_state = [t.data.copy() for t in state_tensors]

    if best_state is not None:
        for tensor, saved in zip(state_tensors, best_state):
            tensor.data[...] = saved
    model.eval()
    return model, history


def score(
    model: DenseNet,
    manifest: Manifest,
    split: Split,
    color_mode: ColorMode = ColorMode.RGB,
    resize_to: Optional[int] = None,
    batch_size: int = 32,
) -> list[ScoredSample]:
    """Eval-mode spoof probabilities for every patch in the split, sorted by
    record id. Preprocessing mirrors training exactly (minus augmentation)."""
    expected = 1 if color_mode is ColorMode.GRAYSCALE else 3
    if model.config.input_channels != expected:
        raise ConfigError(
            f"model expects {model.config.input_channels} channels but color_mode "
            f"{color_mode.value} produces {expected}"
        )
    records = _training_records(manifest, split)
    if not records:
        return []
    model.eval()
    out: list[ScoredSample] = []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        batch = np.stack(
            [
                preprocess(
                    imops.load_png(manifest.root / r.path),
                    color_mode=color_mode,
                    resize_to=resize_to,
                )
                for r in chunk
            ]
        )
        probs = model.forward(batch)
        for rec, p in zip(chunk, probs):
            out.append(
                ScoredSample(record_id=rec.id, species=rec.species, score=float(p), split=split)
            )
    return out
