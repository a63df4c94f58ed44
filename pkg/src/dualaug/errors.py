"""Exception types shared across the package."""


class DualAugError(Exception):
    """Base class for all domain errors (CLI maps these to exit code 1)."""


class CycleError(DualAugError):
    """Parent array contains a cycle instead of a tree."""


class ArityError(DualAugError):
    """Joint count does not match the expected skeleton size."""


class BehindCameraError(DualAugError):
    """A joint would project from behind (or too close to) the camera."""


class ShapeError(DualAugError):
    """Array dimensions do not match an operation's contract."""


class NonScalarError(DualAugError):
    """Backward pass requested from a non-scalar node."""


class LengthError(DualAugError):
    """Flat vectors passed to an optimizer have mismatched lengths."""


class EmptyBatchError(DualAugError):
    """A batch-valued operation received zero samples."""


class DegenerateError(DualAugError):
    """Input has zero spread where a scale/alignment is required."""


class ParseError(DualAugError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IoError(DualAugError):
    """Filesystem read/write failure."""
