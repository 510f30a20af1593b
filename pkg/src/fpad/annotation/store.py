"""Annotation task store: four-finger images to be boxed, optimistic
concurrency per task, and an append-only JSONL log separate from the
manifest so raw human input stays auditable.

Box coordinates are image pixels, origin top-left, right/bottom edges
exclusive: a box covers columns [x, x+w) and rows [y, y+h).
"""

from __future__ import annotations

import bisect
import json
import os
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

from .. import imops
from ..errors import (
    BoxValidationError,
    InvalidCursorError,
    RevisionConflictError,
    StatusTransitionError,
    TaskNotFoundError,
)
from ..registry import Finger, Kind, Manifest, SampleRecord

MIN_BOX_SIDE = 16

BOX_LABELS = (Finger.INDEX, Finger.MIDDLE, Finger.RING, Finger.LITTLE)


class TaskStatus(Enum):
    PENDING = "Pending"
    IN_PROGRESS = "InProgress"
    DONE = "Done"
    SKIPPED = "Skipped"


# set_status transitions; submissions jump straight to Done from any status.
ALLOWED_TRANSITIONS = {
    TaskStatus.PENDING: {TaskStatus.IN_PROGRESS},
    TaskStatus.IN_PROGRESS: {TaskStatus.DONE, TaskStatus.SKIPPED},
    TaskStatus.SKIPPED: {TaskStatus.PENDING, TaskStatus.IN_PROGRESS},
    TaskStatus.DONE: set(),
}


@dataclass(frozen=True)
class Box:
    x: int
    y: int
    w: int
    h: int
    label: Finger
    annotator: str = "anonymous"
    created_at: float = 0.0

    def to_json(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "w": self.w,
            "h": self.h,
            "label": self.label.value,
            "annotator": self.annotator,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Box":
        return cls(
            x=int(obj["x"]),
            y=int(obj["y"]),
            w=int(obj["w"]),
            h=int(obj["h"]),
            label=Finger(obj["label"]),
            annotator=str(obj.get("annotator", "anonymous")),
            created_at=float(obj.get("created_at", 0.0)),
        )


@dataclass
class Task:
    record_id: str
    status: TaskStatus = TaskStatus.PENDING
    boxes: tuple[Box, ...] = ()
    revision: int = 0

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "status": self.status.value,
            "boxes": [b.to_json() for b in self.boxes],
            "revision": self.revision,
        }


def validate_boxes(boxes: list[Box], width: int, height: int) -> list[str]:
    """Every invariant breach across the submission; empty means valid."""
    problems = []
    if not boxes:
        problems.append("at least one box is required (Done requires >= 1 box)")
    seen_labels = set()
    for i, box in enumerate(boxes):
        where = f"box {i} ({box.label.value})"
        if box.label not in BOX_LABELS:
            problems.append(f"{where}: label must be a finger, got {box.label.value}")
        if box.w < MIN_BOX_SIDE or box.h < MIN_BOX_SIDE:
            problems.append(f"{where}: {box.w}x{box.h} below minimum {MIN_BOX_SIDE}px side")
        if box.x < 0 or box.y < 0 or box.x + box.w > width or box.y + box.h > height:
            problems.append(
                f"{where}: [{box.x},{box.y},{box.w},{box.h}] exceeds image {width}x{height}"
            )
        if box.label in seen_labels:
            problems.append(f"{where}: duplicate label {box.label.value}")
        seen_labels.add(box.label)
    return problems


class AnnotationStore:
    """Tasks for every four-finger record in the manifest.

    State lives in memory; every accepted mutation appends one snapshot line
    to annotations.jsonl (fsync before acknowledging) with last-wins replay
    on startup. compact() rewrites the log atomically to one line per task.
    """

    def __init__(self, manifest: Manifest, annotations_path=None):
        self.manifest = manifest
        self.path = Path(annotations_path) if annotations_path else manifest.root / "annotations.jsonl"
        self._lock = threading.Lock()
        self._tasks: dict[str, Task] = {}
        self._records: dict[str, SampleRecord] = {}
        for rec in sorted(manifest.records, key=lambda r: r.id):
            if rec.kind is Kind.FOUR_FINGER:
                self._tasks[rec.id] = Task(record_id=rec.id)
                self._records[rec.id] = rec
        self._ordered_ids = sorted(self._tasks)
        self._replay()

    def _replay(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                rid = obj["record_id"]
                if rid not in self._tasks:
                    continue
                self._tasks[rid] = Task(
                    record_id=rid,
                    status=TaskStatus(obj["status"]),
                    boxes=tuple(Box.from_json(b) for b in obj.get("boxes", [])),
                    revision=int(obj["revision"]),
                )

    def _persist(self, task: Task) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(task.to_json(), sort_keys=True))
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())

    def compact(self) -> None:
        """Collapse the append log to one line per task, atomically."""
        with self._lock:
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                for rid in self._ordered_ids:
                    task = self._tasks[rid]
                    if task.revision > 0:
                        fh.write(json.dumps(task.to_json(), sort_keys=True))
                        fh.write("\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)

    def record_for(self, task_id: str) -> SampleRecord:
        rec = self._records.get(task_id)
        if rec is None:
            raise TaskNotFoundError(f"no annotation task for record {task_id}")
        return rec

    def image_dimensions(self, task_id: str) -> tuple[int, int]:
        rec = self.record_for(task_id)
        return imops.png_dimensions(self.manifest.root / rec.path)

    def get(self, task_id: str) -> Task:
        task = self._tasks.get(task_id)
        if task is None:
            raise TaskNotFoundError(f"no annotation task for record {task_id}")
        return task

    def list_tasks(
        self,
        status: Optional[TaskStatus] = None,
        cursor: Optional[str] = None,
        limit: int = 50,
    ) -> tuple[list[Task], Optional[str]]:
        """Page of tasks ordered by record id, starting after the cursor.

        The returned cursor is the last id of the page, or None on the final
        page; feeding pages back in concatenates to the unpaginated listing.
        """
        if limit < 1:
            raise InvalidCursorError(f"limit must be >= 1, got {limit}")
        start = 0
        if cursor is not None:
            if cursor not in self._tasks:
                raise InvalidCursorError(f"unknown cursor {cursor!r}")
            start = bisect.bisect_right(self._ordered_ids, cursor)
        page: list[Task] = []
        last_index = start - 1
        for i in range(start, len(self._ordered_ids)):
            task = self._tasks[self._ordered_ids[i]]
            if status is not None and task.status is not status:
                continue
            page.append(task)
            last_index = i
            if len(page) == limit:
                break
        has_more = False
        for i in range(last_index + 1, len(self._ordered_ids)):
            task = self._tasks[self._ordered_ids[i]]
            if status is None or task.status is status:
                has_more = True
                break
        next_cursor = self._ordered_ids[last_index] if (page and has_more) else None
        return page, next_cursor

    def submit_boxes(self, task_id: str, boxes: list[Box], expected_revision: int) -> Task:
        """Replace the task's boxes atomically and mark it Done.

        The stale-revision check runs before validation so racing clients get
        a conflict, not a spurious validation verdict on a moved target.
        """
        with self._lock:
            task = self.get(task_id)
            if expected_revision != task.revision:
                raise RevisionConflictError(
                    f"task {task_id} is at revision {task.revision}, "
                    f"submission expected {expected_revision}"
                )
            width, height = self.image_dimensions(task_id)
            stamped = [
                replace(b, created_at=b.created_at or time.time()) for b in boxes
            ]
            problems = validate_boxes(stamped, width, height)
            if problems:
                raise BoxValidationError(
                    f"{len(problems)} invalid box(es) for task {task_id}", details=problems
                )
            updated = Task(
                record_id=task_id,
                status=TaskStatus.DONE,
                boxes=tuple(stamped),
                revision=task.revision + 1,
            )
            self._persist(updated)
            self._tasks[task_id] = updated
            return updated

    def set_status(self, task_id: str, new_status: TaskStatus, expected_revision: int) -> Task:
        with self._lock:
            task = self.get(task_id)
            if expected_revision != task.revision:
                raise RevisionConflictError(
                    f"task {task_id} is at revision {task.revision}, "
                    f"update expected {expected_revision}"
                )
            if new_status not in ALLOWED_TRANSITIONS[task.status]:
                raise StatusTransitionError(
                    f"task {task_id}: {task.status.value} -> {new_status.value} not allowed"
                )
            if new_status is TaskStatus.DONE and not task.boxes:
                raise StatusTransitionError(
                    f"task {task_id}: Done requires at least one box; submit boxes instead"
                )
            updated = Task(
                record_id=task_id,
                status=new_status,
                boxes=task.boxes,
                revision=task.revision + 1,
            )
            self._persist(updated)
            self._tasks[task_id] = updated
            return updated

    def done_tasks(self) -> list[Task]:
        return [self._tasks[rid] for rid in self._ordered_ids if self._tasks[rid].status is TaskStatus.DONE]
