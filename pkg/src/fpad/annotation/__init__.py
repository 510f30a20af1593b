"""Fingertip box annotation: persistent task store, crop export, and the
HTTP service consumed by the browser annotator."""

from .store import AnnotationStore, Box, Task, TaskStatus
from .export import export_crops

__all__ = ["AnnotationStore", "Box", "Task", "TaskStatus", "export_crops"]
