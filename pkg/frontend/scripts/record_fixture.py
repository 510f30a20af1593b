"""Record real annotation-service responses into a JSON fixture.

The frontend's contract tests replay these exchanges against the API client
so request and response shapes stay pinned to what the service actually
speaks. Rerun after changing the service:

    python3 scripts/record_fixture.py > tests/fixtures/recorded-api.json
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from fpad import imops
from fpad.annotation.service import create_app
from fpad.registry import Finger, Hand, Kind, Manifest, SampleRecord, Species, Split

WIDTH, HEIGHT = 200, 120


def build_manifest(root: Path) -> Path:
    manifest = Manifest(root / "manifest.jsonl")
    rng = np.random.default_rng(0)
    for i in range(3):
        rec = SampleRecord(
            id=f"hand{i}",
            subject_id=f"subj{i}",
            session=1,
            hand=Hand.RIGHT,
            finger=Finger.NOT_APPLICABLE,
            species=Species.LIVE,
            sensor="phone",
            kind=Kind.FOUR_FINGER,
            path=f"raw/hand{i}.png",
            split=Split.TRAIN,
        )
        pixels = rng.integers(0, 256, size=(HEIGHT, WIDTH, 3), dtype=np.uint8)
        imops.save_png(imops.ImageBuffer(pixels=pixels), root / rec.path)
        manifest.upsert([rec])
    manifest.save()
    return manifest.path


def main() -> None:
    exchanges = []
    with tempfile.TemporaryDirectory() as tmp:
        manifest_path = build_manifest(Path(tmp))
        client = TestClient(create_app(manifest_path))

        def record(name, method, path, body=None):
            response = client.request(method, path, json=body)
            exchanges.append(
                {
                    "name": name,
                    "method": method,
                    "path": path,
                    "request_body": body,
                    "status": response.status_code,
                    "body": response.json(),
                }
            )
            return response.json()

        record("list_pending", "GET", "/api/tasks?status=Pending")
        page = record("list_page_1", "GET", "/api/tasks?limit=2")
        record("list_page_2", "GET", f"/api/tasks?limit=2&cursor={page['next_cursor']}")
        record("list_bad_cursor", "GET", "/api/tasks?cursor=nonsense")
        record("get_task", "GET", "/api/tasks/hand0")
        record("get_task_missing", "GET", "/api/tasks/ghost")
        record("image_meta", "GET", "/api/images/hand0/meta")

        boxes = [
            {"x": 10, "y": 20, "w": 30, "h": 40, "label": "Index"},
            {"x": 60, "y": 20, "w": 30, "h": 40, "label": "Middle"},
        ]
        record(
            "claim_in_progress",
            "PUT",
            "/api/tasks/hand0/status",
            {"status": "InProgress", "expected_revision": 0},
        )
        record(
            "claim_already_taken",
            "PUT",
            "/api/tasks/hand0/status",
            {"status": "InProgress", "expected_revision": 0},
        )
        record(
            "submit_ok",
            "PUT",
            "/api/tasks/hand0/boxes",
            {"boxes": boxes, "expected_revision": 1, "annotator": "recorder"},
        )
        record(
            "submit_stale",
            "PUT",
            "/api/tasks/hand0/boxes",
            {"boxes": boxes, "expected_revision": 1, "annotator": "recorder"},
        )
        record(
            "submit_invalid",
            "PUT",
            "/api/tasks/hand1/boxes",
            {
                "boxes": [{"x": 0, "y": 0, "w": 4, "h": 4, "label": "Index"}],
                "expected_revision": 0,
                "annotator": "recorder",
            },
        )
        record("export", "POST", "/api/export")

    json.dump(exchanges, sys.stdout, indent=2)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
