"""Manifest of live/PAI samples: species taxonomy, JSONL storage, split
protocol with the unknown-PAI holdout, validation, and summary counts.

The manifest is a UTF-8 JSONL file, one record per line, snake_case keys,
paths relative to the manifest's directory. Mutation is single-writer with
atomic replace; every query operation is pure.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import (
    DuplicateIdError,
    ImageError,
    ManifestError,
    ManifestParseError,
    SplitError,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class Difficulty(Enum):
    A = "A"
    B = "B"
    C = "C"
    NOT_APPLICABLE = "NotApplicable"


class Species(Enum):
    LIVE = "Live"
    ECOFLEX_LAYOVER = "EcoflexLayover"
    PLAYDOH_LAYOVER = "PlaydohLayover"
    WOOD_GLUE_LAYOVER = "WoodGlueLayover"
    SYNTHETIC_FINGERTIP = "SyntheticFingertip"
    LATEX_LAYOVER = "LatexLayover"
    PRINTED_PHOTO = "PrintedPhoto"

    @property
    def code(self) -> str:
        return _SPECIES_CODE[self]

    @property
    def difficulty(self) -> Difficulty:
        return _SPECIES_DIFFICULTY[self]

    @property
    def is_attack(self) -> bool:
        return self is not Species.LIVE

    @classmethod
    def parse(cls, text: str) -> "Species":
        for sp in cls:
            if text == sp.value or text == sp.code:
                return sp
        raise ManifestError(f"unknown species label: {text!r}")


_SPECIES_CODE = {
    Species.LIVE: "Live",
    Species.ECOFLEX_LAYOVER: "EL",
    Species.PLAYDOH_LAYOVER: "PL",
    Species.WOOD_GLUE_LAYOVER: "WL",
    Species.SYNTHETIC_FINGERTIP: "SF",
    Species.LATEX_LAYOVER: "LL",
    Species.PRINTED_PHOTO: "PP",
}

# Fixed difficulty mapping: PP->A; EL,PL,WL,LL->B; SF->C; Live->NotApplicable.
_SPECIES_DIFFICULTY = {
    Species.LIVE: Difficulty.NOT_APPLICABLE,
    Species.ECOFLEX_LAYOVER: Difficulty.B,
    Species.PLAYDOH_LAYOVER: Difficulty.B,
    Species.WOOD_GLUE_LAYOVER: Difficulty.B,
    Species.SYNTHETIC_FINGERTIP: Difficulty.C,
    Species.LATEX_LAYOVER: Difficulty.B,
    Species.PRINTED_PHOTO: Difficulty.A,
}

# Species never allowed in Train/Validation; they are held out to measure
# generalization against unseen attacks.
UNKNOWN_PAI_SPECIES = frozenset({Species.LATEX_LAYOVER, Species.PRINTED_PHOTO})


class Hand(Enum):
    LEFT = "Left"
    RIGHT = "Right"
    NOT_APPLICABLE = "NotApplicable"


class Finger(Enum):
    INDEX = "Index"
    MIDDLE = "Middle"
    RING = "Ring"
    LITTLE = "Little"
    NOT_APPLICABLE = "NotApplicable"


class Kind(Enum):
    FOUR_FINGER = "FourFinger"
    SINGLE_FINGERTIP = "SingleFingertip"
    PATCH = "Patch"


class Split(Enum):
    TRAIN = "Train"
    VALIDATION = "Validation"
    TEST = "Test"
    UNASSIGNED = "Unassigned"


# parent lineage: fingertip -> four-finger, patch -> fingertip
EXPECTED_PARENT_KIND = {
    Kind.SINGLE_FINGERTIP: Kind.FOUR_FINGER,
    Kind.PATCH: Kind.SINGLE_FINGERTIP,
}

QUALITY_OK = "ok"
QUALITY_REJECTED = "rejected"


def record_id(rel_path: str, species: Species) -> str:
    """Deterministic id from (relative path, species); stable across machines."""
    digest = hashlib.sha256(f"{rel_path}\x1f{species.value}".encode("utf-8")).hexdigest()
    return digest[:16]


@dataclass
class SampleRecord:
    id: str
    subject_id: str
    session: int
    hand: Hand
    finger: Finger
    species: Species
    sensor: str
    kind: Kind
    path: str
    split: Split = Split.UNASSIGNED
    blur_score: Optional[float] = None
    parent_id: Optional[str] = None
    quality: str = QUALITY_OK

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "subject_id": self.subject_id,
            "session": self.session,
            "hand": self.hand.value,
            "finger": self.finger.value,
            "species": self.species.value,
            "sensor": self.sensor,
            "kind": self.kind.value,
            "path": self.path,
            "split": self.split.value,
            "blur_score": self.blur_score,
            "parent_id": self.parent_id,
            "quality": self.quality,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SampleRecord":
        if not isinstance(obj, dict):
            raise ManifestError("record line must be a JSON object")
        required = {
            "schema_version", "id", "subject_id", "session", "hand", "finger",
            "species", "sensor", "kind", "path", "split",
        }
        optional = {"blur_score", "parent_id", "quality"}
        keys = set(obj)
        unknown = keys - required - optional
        if unknown:
            raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
        missing = required - keys
        if missing:
            raise ManifestError(f"missing manifest keys: {sorted(missing)}")
        if obj["schema_version"] != SCHEMA_VERSION:
            raise ManifestError(
                f"unsupported schema_version {obj['schema_version']} (expected {SCHEMA_VERSION})"
            )
        try:
            return cls(
                id=str(obj["id"]),
                subject_id=str(obj["subject_id"]),
                session=int(obj["session"]),
                hand=Hand(obj["hand"]),
                finger=Finger(obj["finger"]),
                species=Species.parse(obj["species"]),
                sensor=str(obj["sensor"]),
                kind=Kind(obj["kind"]),
                path=str(obj["path"]),
                split=Split(obj["split"]),
                blur_score=None if obj.get("blur_score") is None else float(obj["blur_score"]),
                parent_id=obj.get("parent_id"),
                quality=obj.get("quality", QUALITY_OK),
            )
        except ValueError as exc:
            raise ManifestError(str(exc)) from exc


@dataclass(frozen=True)
class SplitPlan:
    train_fraction: float = 0.85
    validation_fraction: float = 0.08
    subject_disjoint: bool = True
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise SplitError(f"train_fraction must be in (0,1), got {self.train_fraction}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise SplitError(
                f"validation_fraction must be in (0,1), got {self.validation_fraction}"
            )
        if self.train_fraction + self.validation_fraction >= 1.0:
            raise SplitError("train_fraction + validation_fraction must be < 1")


class Manifest:
    """In-memory view of a manifest.jsonl file.

    Reads see a consistent snapshot; save() replaces the file atomically and
    keeps a .bak copy of the previous version unless told otherwise.
    """

    def __init__(self, path, records: Optional[list[SampleRecord]] = None):
        self.path = Path(path)
        self.records: list[SampleRecord] = list(records or [])

    @property
    def root(self) -> Path:
        return self.path.parent

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self.records)

    def ids(self) -> set[str]:
        return {r.id for r in self.records}

    def by_id(self) -> dict[str, SampleRecord]:
        out: dict[str, SampleRecord] = {}
        for r in self.records:
            out.setdefault(r.id, r)
        return out

    def get(self, rec_id: str) -> Optional[SampleRecord]:
        return self.by_id().get(rec_id)

    def select(self, **conditions) -> list[SampleRecord]:
        out = self.records
        for name, wanted in conditions.items():
            out = [r for r in out if getattr(r, name) == wanted]
        return out

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ManifestParseError(f"invalid JSON ({exc.msg})", line_no) from exc
                try:
                    records.append(SampleRecord.from_json(obj))
                except ManifestError as exc:
                    raise ManifestParseError(str(exc), line_no) from exc
        return cls(path, records)

    @classmethod
    def load_or_create(cls, path) -> "Manifest":
        path = Path(path)
        if path.exists():
            return cls.load(path)
        return cls(path)

    def save(self, backup: bool = True) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if backup and self.path.exists():
            shutil.copy2(self.path, self.path.with_suffix(self.path.suffix + ".bak"))
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_json(), sort_keys=True))
                fh.write("\n")
        os.replace(tmp, self.path)

    def append(self, new_records: Iterable[SampleRecord]) -> None:
        """Add records, refusing the first id collision."""
        seen = self.ids()
        for rec in new_records:
            if rec.id in seen:
                raise DuplicateIdError(f"duplicate record id {rec.id} (path {rec.path})")
            seen.add(rec.id)
            self.records.append(rec)

    def upsert(self, new_records: Iterable[SampleRecord]) -> None:
        """Add or replace records by id (used by idempotent exporters)."""
        index = {r.id: i for i, r in enumerate(self.records)}
        for rec in new_records:
            if rec.id in index:
                self.records[index[rec.id]] = rec
            else:
                index[rec.id] = len(self.records)
                self.records.append(rec)


def ingest_directory(
    manifest: Manifest,
    root,
    species: Species,
    sensor: str,
    kind: Kind,
    subject_id: Optional[str] = None,
    session: int = 1,
) -> list[SampleRecord]:
    """Scan a directory tree of PNGs into manifest records (Unassigned split).

    Unreadable files are skipped and logged. When subject_id is not given, a
    file's subject is the first directory component under root, or
    "unlabeled" for files sitting directly in root. The manifest file is
    rewritten atomically after a successful scan.
    """
    from . import imops

    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"ingest root {root} is not a directory")
    new_records = []
    skipped = []
    for file in sorted(root.rglob("*.png")):
        rel_to_root = file.relative_to(root)
        try:
            img = imops.load_png(file)
        except ImageError as exc:
            skipped.append(str(file))
            log.warning("ingest skip file=%s reason=%s", file, exc)
            continue
        del img
        rel_path = os.path.relpath(file, manifest.root)
        rel_path = rel_path.replace(os.sep, "/")
        if subject_id is not None:
            subject = subject_id
        elif len(rel_to_root.parts) > 1:
            subject = rel_to_root.parts[0]
        else:
            subject = "unlabeled"
        new_records.append(
            SampleRecord(
                id=record_id(rel_path, species),
                subject_id=subject,
                session=session,
                hand=Hand.NOT_APPLICABLE,
                finger=Finger.NOT_APPLICABLE,
                species=species,
                sensor=sensor,
                kind=kind,
                path=rel_path,
            )
        )
    manifest.append(new_records)
    manifest.save()
    if skipped:
        log.warning("ingest done added=%d skipped=%d", len(new_records), len(skipped))
    else:
        log.info("ingest done added=%d", len(new_records))
    return new_records


def _half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def assign_splits(manifest: Manifest, plan: SplitPlan) -> Manifest:
    """Partition records into Train/Validation/Test.

    Unknown-PAI species (LL, PP) always land in Test regardless of the plan.
    With subject_disjoint=True the partition is over subject ids, otherwise
    over records. Deterministic given plan.seed.
    """
    plan.validate()
    eligible = [r for r in manifest.records if r.species not in UNKNOWN_PAI_SPECIES]
    for rec in manifest.records:
        if rec.species in UNKNOWN_PAI_SPECIES:
            rec.split = Split.TEST

    rng = np.random.default_rng(plan.seed)
    if plan.subject_disjoint:
        subjects = sorted({r.subject_id for r in eligible})
        if len(subjects) < 3:
            raise SplitError(
                f"subject-disjoint split needs at least 3 subjects, got {len(subjects)}"
            )
        order = rng.permutation(len(subjects))
        shuffled = [subjects[i] for i in order]
        n_train = min(_half_up(plan.train_fraction * len(subjects)), len(subjects))
        n_val = min(_half_up(plan.validation_fraction * len(subjects)), len(subjects) - n_train)
        split_of = {}
        for i, subj in enumerate(shuffled):
            if i < n_train:
                split_of[subj] = Split.TRAIN
            elif i < n_train + n_val:
                split_of[subj] = Split.VALIDATION
            else:
                split_of[subj] = Split.TEST
        for rec in eligible:
            rec.split = split_of[rec.subject_id]
    else:
        ordered = sorted(eligible, key=lambda r: r.id)
        order = rng.permutation(len(ordered))
        n_train = min(_half_up(plan.train_fraction * len(ordered)), len(ordered))
        n_val = min(_half_up(plan.validation_fraction * len(ordered)), len(ordered) - n_train)
        for pos, idx in enumerate(order):
            if pos < n_train:
                ordered[idx].split = Split.TRAIN
            elif pos < n_train + n_val:
                ordered[idx].split = Split.VALIDATION
            else:
                ordered[idx].split = Split.TEST
    return manifest


@dataclass(frozen=True)
class Violation:
    code: str
    record_id: str
    message: str


def validate_manifest(manifest: Manifest) -> list[Violation]:
    """Every invariant violation in the manifest; empty iff well-formed."""
    violations = []
    seen: dict[str, SampleRecord] = {}
    for rec in manifest.records:
        if rec.id in seen:
            violations.append(
                Violation("duplicate_id", rec.id, f"id {rec.id} appears more than once")
            )
        else:
            seen[rec.id] = rec
    for rec in manifest.records:
        if rec.parent_id is not None:
            expected = EXPECTED_PARENT_KIND.get(rec.kind)
            parent = seen.get(rec.parent_id)
            if expected is None:
                violations.append(
                    Violation(
                        "unexpected_parent", rec.id,
                        f"{rec.kind.value} record must not carry a parent_id",
                    )
                )
            elif parent is None:
                violations.append(
                    Violation(
                        "dangling_parent", rec.id,
                        f"parent_id {rec.parent_id} does not resolve to any record",
                    )
                )
            elif parent.kind is not expected:
                violations.append(
                    Violation(
                        "wrong_parent_kind", rec.id,
                        f"parent {rec.parent_id} is {parent.kind.value}, expected {expected.value}",
                    )
                )
        if rec.species in UNKNOWN_PAI_SPECIES and rec.split in (Split.TRAIN, Split.VALIDATION):
            violations.append(
                Violation(
                    "unknown_pai_in_training", rec.id,
                    f"{rec.species.value} must never carry split {rec.split.value}",
                )
            )
        if rec.blur_score is not None:
            if rec.kind is not Kind.SINGLE_FINGERTIP:
                violations.append(
                    Violation(
                        "blur_score_wrong_kind", rec.id,
                        f"blur_score set on {rec.kind.value} record",
                    )
                )
            elif rec.blur_score < 0:
                violations.append(
                    Violation("negative_blur_score", rec.id, f"blur_score {rec.blur_score} < 0")
                )
        if rec.quality not in (QUALITY_OK, QUALITY_REJECTED):
            violations.append(
                Violation("bad_quality", rec.id, f"quality must be ok/rejected, got {rec.quality}")
            )
    return violations


@dataclass(frozen=True)
class SummaryRow:
    species: Species
    kind: Kind
    split: Split
    count: int


@dataclass(frozen=True)
class SummaryTable:
    rows: tuple[SummaryRow, ...]
    total: int

    def to_text(self) -> str:
        header = f"{'species':<20} {'kind':<17} {'split':<12} {'count':>8}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            lines.append(
                f"{row.species.value:<20} {row.kind.value:<17} {row.split.value:<12} {row.count:>8}"
            )
        lines.append("-" * len(header))
        lines.append(f"{'total':<51} {self.total:>8}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["species,kind,split,count"]
        for row in self.rows:
            lines.append(f"{row.species.value},{row.kind.value},{row.split.value},{row.count}")
        return "\n".join(lines) + "\n"


_SPECIES_ORDER = list(Species)
_KIND_ORDER = list(Kind)
_SPLIT_ORDER = list(Split)


def summarize(manifest: Manifest) -> SummaryTable:
    """Counts keyed by species x kind x split; totals equal manifest length."""
    counts = Counter((r.species, r.kind, r.split) for r in manifest.records)
    keys = sorted(
        counts,
        key=lambda k: (
            _SPECIES_ORDER.index(k[0]),
            _KIND_ORDER.index(k[1]),
            _SPLIT_ORDER.index(k[2]),
        ),
    )
    rows = tuple(SummaryRow(sp, kind, split, counts[(sp, kind, split)]) for sp, kind, split in keys)
    return SummaryTable(rows=rows, total=len(manifest.records))
