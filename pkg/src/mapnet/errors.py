"""Exception types raised across the package."""


class MapnetError(Exception):
    """Base class for all package errors."""


class ValidationError(MapnetError, ValueError):
    """Input violates an operation's contract (CLI exit code 1)."""


class BadShape(ValidationError):
    pass


class EmptySequence(ValidationError):
    pass


class MissingMarker(ValidationError):
    def __init__(self, name):
        super().__init__(f"missing required marker: {name}")
        self.name = name


class InvalidEvent(ValidationError):
    pass


class BadWindowLength(ValidationError):
    pass


class UnsupportedTau(ValidationError):
    pass


class TooFewGroups(ValidationError):
    pass


class NoActivityDetected(ValidationError):
    pass


class EmptyAfterTrim(ValidationError):
    pass


class UnconfiguredInputLength(ValidationError):
    pass


class NonFiniteLoss(MapnetError, FloatingPointError):
    pass


class TooShort(ValidationError):
    pass


class BadWindow(ValidationError):
    pass


class TooFewFrames(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class MissingCheckpoint(ValidationError):
    pass


class ArchiveIOError(MapnetError, OSError):
    """File-level failure (CLI exit code 2)."""


class UnsupportedFormat(ArchiveIOError):
    pass


class UnpairedFile(ArchiveIOError):
    def __init__(self, names):
        self.names = sorted(names)
        super().__init__("unpaired files: " + ", ".join(self.names))
