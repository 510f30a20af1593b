"""Turn Done annotation tasks into SingleFingertip manifest records."""

from __future__ import annotations

import logging
from pathlib import Path

from .. import imops
from ..registry import Kind, Manifest, SampleRecord, record_id
from .store import AnnotationStore, TaskStatus

log = logging.getLogger(__name__)


def export_crops(store: AnnotationStore, out_dir: str = "fingertips") -> list[SampleRecord]:
    """Crop every box of every Done task into PNG files under the manifest
    root and upsert matching SingleFingertip records.

    Deterministic paths (<out_dir>/<parent_id>_<label>.png) plus deterministic
    PNG encoding make re-export byte-identical and manifest-idempotent.
    """
    manifest = store.manifest
    created: list[SampleRecord] = []
    for task in store.done_tasks():
        parent = store.record_for(task.record_id)
        src = imops.load_png(manifest.root / parent.path)
        for box in task.boxes:
            crop = imops.crop(src, box.x, box.y, box.w, box.h)
            rel = f"{out_dir}/{parent.id}_{box.label.value}.png"
            imops.save_png(crop, manifest.root / rel)
            created.append(
                SampleRecord(
                    id=record_id(rel, parent.species),
                    subject_id=parent.subject_id,
                    session=parent.session,
                    hand=parent.hand,
                    finger=box.label,
                    species=parent.species,
                    sensor=parent.sensor,
                    kind=Kind.SINGLE_FINGERTIP,
                    path=rel,
                    split=parent.split,
                    parent_id=parent.id,
                )
            )
    manifest.upsert(created)
    manifest.save()
    log.info("export done tasks=%d crops=%d", len(store.done_tasks()), len(created))
    return created
