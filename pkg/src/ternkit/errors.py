"""Exception types shared across the package.

Every error raised deliberately by this package derives from TernkitError,
so callers can catch one base class at API boundaries. The CLI maps each
family onto a distinct process exit code.
"""


class TernkitError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(TernkitError):
    """Input values violate a documented precondition (non-finite, empty, out of domain)."""


class ShapeError(TernkitError):
    """Operand dimensions are incompatible."""


class CorruptDataError(TernkitError):
    """A packed ternary payload contains the reserved 2-bit code.

    byte_offset is the offset of the first offending byte within the payload.
    """

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class InvalidTokenError(TernkitError):
    """A token id is outside the model vocabulary."""


class CapacityError(TernkitError):
    """A sequence would exceed the model's maximum context length."""


class ChatTemplateError(TernkitError):
    """Conversation structure or content violates the chat template rules."""


class FormatError(TernkitError):
    """Base class for model container file errors."""


class BadMagicError(FormatError):
    """File does not start with the container magic."""


class UnsupportedVersionError(FormatError):
    """Container version is not supported by this reader."""


class TruncatedFileError(FormatError):
    """File ends before a declared structure or payload is complete."""


class OverlappingRecordsError(FormatError):
    """Two tensor payloads claim overlapping byte ranges."""


class InvalidRecordError(FormatError):
    """A header or tensor record field is malformed or inconsistent."""
