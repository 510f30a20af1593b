"""Exception hierarchy shared across the toolkit.

Every error raised by fpad code derives from FpadError so the CLI can map
domain failures to exit code 1 and usage/config failures to exit code 2.
"""


class FpadError(Exception):
    exit_code = 1


class ConfigError(FpadError):
    """Bad flag combination, config file key, or inconsistent settings."""

    exit_code = 2


# --- manifest / registry ---

class ManifestError(FpadError):
    pass


class ManifestParseError(ManifestError):
    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateIdError(ManifestError):
    pass


class SplitError(ManifestError):
    pass


# --- images ---

class ImageError(FpadError):
    pass


class ImageFormatError(ImageError):
    pass


class DimensionError(ImageError):
    pass


# --- patches ---

class PatchError(FpadError):
    pass


# --- tensor engine ---

class ShapeError(FpadError):
    """Layer input does not conform to the layer's shape algebra."""

    def __init__(self, layer: str, message: str):
        super().__init__(f"{layer}: {message}")
        self.layer = layer


class LayerStateError(FpadError):
    """backward() was invoked without a cached forward pass."""


# --- model / checkpoints ---

class BuildError(FpadError):
    pass


class CheckpointError(FpadError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointDigestError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


# --- metrics / training ---

class MetricsError(FpadError):
    pass


class TrainingError(FpadError):
    pass


# --- annotation service ---

class AnnotationError(FpadError):
    pass


class TaskNotFoundError(AnnotationError):
    pass


class RevisionConflictError(AnnotationError):
    pass


class BoxValidationError(AnnotationError):
    def __init__(self, message: str, details=None):
        super().__init__(message)
        self.details = details or []


class StatusTransitionError(AnnotationError):
    pass


class InvalidCursorError(AnnotationError):
    pass
