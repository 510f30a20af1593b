"""HTTP facade over the annotation store.

JSON API under /api, static annotator UI at /. Errors come back as
{code, message, details} with a status code per error family.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .. import imops
from ..errors import (
    AnnotationError,
    BoxValidationError,
    FpadError,
    ImageError,
    InvalidCursorError,
    RevisionConflictError,
    StatusTransitionError,
    TaskNotFoundError,
)
from ..registry import Finger, Manifest
from .export import export_crops
from .store import AnnotationStore, Box, TaskStatus

log = logging.getLogger(__name__)

_HTTP_STATUS = [
    (TaskNotFoundError, 404, "task_not_found"),
    (RevisionConflictError, 409, "revision_conflict"),
    (StatusTransitionError, 409, "status_transition"),
    (BoxValidationError, 400, "box_validation"),
    (InvalidCursorError, 400, "invalid_cursor"),
    (ImageError, 404, "image_error"),
    (AnnotationError, 400, "annotation_error"),
    (FpadError, 400, "error"),
]


def _error_response(exc: FpadError) -> JSONResponse:
    for klass, status, code in _HTTP_STATUS:
        if isinstance(exc, klass):
            details = getattr(exc, "details", None) or []
            return JSONResponse(
                status_code=status,
                content={"code": code, "message": str(exc), "details": details},
            )
    raise exc


class BoxIn(BaseModel):
    x: int
    y: int
    w: int
    h: int
    label: str


class SubmitIn(BaseModel):
    boxes: list[BoxIn]
    expected_revision: int
    annotator: str = "anonymous"


class StatusIn(BaseModel):
    status: str
    expected_revision: int


def _parse_label(label: str) -> Finger:
    try:
        finger = Finger(label)
    except ValueError:
        raise BoxValidationError(
            f"unknown finger label {label!r}",
            details=[f"label must be one of {[f.value for f in Finger if f is not Finger.NOT_APPLICABLE]}"],
        )
    if finger is Finger.NOT_APPLICABLE:
        raise BoxValidationError(
            f"label {label!r} is not an annotatable finger", details=[label]
        )
    return finger


def create_app(
    manifest_path,
    annotations_path=None,
    static_dir: Optional[Path] = None,
) -> FastAPI:
    manifest = Manifest.load(manifest_path)
    store = AnnotationStore(manifest, annotations_path=annotations_path)
    app = FastAPI(title="fingertip annotator", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.exception_handler(FpadError)
    async def fpad_error_handler(request: Request, exc: FpadError):
        return _error_response(exc)

    @app.get("/api/tasks")
    def list_tasks(status: Optional[str] = None, cursor: Optional[str] = None, limit: int = 50):
        status_filter = None
        if status is not None and status != "":
            try:
                status_filter = TaskStatus(status)
            except ValueError:
                raise InvalidCursorError(f"unknown status filter {status!r}")
        tasks, next_cursor = store.list_tasks(status=status_filter, cursor=cursor, limit=limit)
        return {"tasks": [t.to_json() for t in tasks], "next_cursor": next_cursor}

    @app.get("/api/tasks/{task_id}")
    def get_task(task_id: str):
        return store.get(task_id).to_json()

    @app.get("/api/images/{task_id}")
    def get_image(task_id: str):
        rec = store.record_for(task_id)
        file = store.manifest.root / rec.path
        if not file.exists():
            raise ImageError(f"image file missing for record {task_id}")
        return Response(content=file.read_bytes(), media_type="image/png")

    @app.get("/api/images/{task_id}/meta")
    def get_image_meta(task_id: str):
        rec = store.record_for(task_id)
        width, height = store.image_dimensions(task_id)
        return {
            "record_id": rec.id,
            "width": width,
            "height": height,
            "species": rec.species.value,
            "sensor": rec.sensor,
        }

    @app.put("/api/tasks/{task_id}/boxes")
    def put_boxes(task_id: str, body: SubmitIn):
        boxes = [
            Box(
                x=b.x,
                y=b.y,
                w=b.w,
                h=b.h,
                label=_parse_label(b.label),
                annotator=body.annotator,
            )
            for b in body.boxes
        ]
        task = store.submit_boxes(task_id, boxes, body.expected_revision)
        return task.to_json()

    @app.put("/api/tasks/{task_id}/status")
    def put_status(task_id: str, body: StatusIn):
        try:
            new_status = TaskStatus(body.status)
        except ValueError:
            raise StatusTransitionError(f"unknown status {body.status!r}")
        task = store.set_status(task_id, new_status, body.expected_revision)
        return task.to_json()

    @app.post("/api/export")
    def post_export():
        records = export_crops(store)
        return {"created": len(records), "record_ids": [r.id for r in records]}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
