"""Exception types shared across bdekit."""


class BDEError(Exception):
    """Base class for every error raised by bdekit."""


class InvalidInputError(BDEError, ValueError):
    """Caller supplied data that violates an operation's precondition."""


class InvariantViolation(BDEError, RuntimeError):
    """An internal guarantee failed. Always a bug."""


class CheckpointError(BDEError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointDigestError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class ImageFormatError(BDEError):
    pass


class UnsupportedColorTypeError(ImageFormatError):
    pass


class TruncatedImageError(ImageFormatError):
    pass


class ManifestMismatchError(BDEError):
    def __init__(self, message, missing=(), unexpected=(), changed=()):
        super().__init__(message)
        self.missing = list(missing)
        self.unexpected = list(unexpected)
        self.changed = list(changed)
