"""Exception hierarchy shared by every distillcap module."""


class DistillcapError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DistillcapError, ValueError):
    pass


class EmptySequenceError(ShapeError):
    pass


class NonFiniteError(DistillcapError, FloatingPointError):
    pass


class ConsistencyError(DistillcapError, RuntimeError):
    """An internal numerical invariant was violated."""


class FormatError(DistillcapError, ValueError):
    """A binary file did not start with the expected magic bytes or version."""


class TruncatedFileError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


class ManifestError(DistillcapError, ValueError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class DuplicateIdError(ManifestError):
    pass


class UndefinedMetricError(DistillcapError, ValueError):
    pass


class InvalidRateError(DistillcapError, ValueError):
    pass


class MissingCheckpointError(DistillcapError, FileNotFoundError):
    pass


class StageError(DistillcapError):
    """Wraps a failure inside an experiment stage, tagging it with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
