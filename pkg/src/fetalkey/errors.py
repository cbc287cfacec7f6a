"""Exception hierarchy shared by all fetalkey modules.

Every error raised on purpose by the library derives from FetalKeyError,
so callers (and the CLI) can separate data problems from model problems.
"""


class FetalKeyError(Exception):
    """Base class for all library errors."""


class DataError(FetalKeyError):
    """Problem with user-supplied data (frames, manifests, records)."""


class ModelError(FetalKeyError):
    """Problem with a model file or a model backend."""


class ShapeMismatch(FetalKeyError, ValueError):
    pass


class EmptySequence(DataError, ValueError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


class InvalidVector(DataError, ValueError):
    """A probability/feature vector violates its invariants."""


class EmptyDataset(DataError, ValueError):
    pass


class NoFrames(DataError):
    pass


class InconsistentDimensions(DataError):
    pass


class UnreadableFile(DataError):
    def __init__(self, path, reason=""):
        self.path = str(path)
        msg = f"cannot read {self.path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class ModelFileNotFound(ModelError, FileNotFoundError):
    pass


class UnsupportedFormat(ModelError):
    pass


class ModelShapeMismatch(ModelError, ShapeMismatch):
    """Model outputs do not match the 5-way / 1280-dim contract."""


class InferenceFailure(ModelError):
    pass


class WeightsFileError(ModelError, OSError):
    """Weights file missing, unreadable or truncated."""


class FormatVersionMismatch(ModelError):
    pass
