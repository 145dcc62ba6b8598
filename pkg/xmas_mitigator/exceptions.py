"""
Error types raised by xmas_mitigator.

Every error derives from ``XmasError`` and from the closest builtin category,
so callers may catch either.
"""
from typing import Optional


class XmasError(Exception):
    """Base class for all library errors."""


class ImageFormatError(XmasError, ValueError):
    """Image file is unreadable, truncated, of an unsupported format or empty."""


class ImageIOError(XmasError, OSError):
    """Writing an image or report failed."""


class KernelFormatError(XmasError, ValueError):
    """Kernel text or shorthand is malformed."""


class DimensionMismatchError(XmasError, ValueError):
    """Two images that must share a shape do not."""


class EnumerationTooLargeError(XmasError, ValueError):
    """Exact enumeration would exceed the configured limit."""


class StepContextError(XmasError):
    """An error that can report the mitigation step it happened at."""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)

    def at_step(self, step: int) -> 'StepContextError':
        """Return a copy of this error carrying the mitigation step."""
        return type(self)(str(self), step=step)


class ClassifierError(StepContextError, RuntimeError):
    """A classifier backend failed to produce a prediction."""


class ClassifierTimeoutError(ClassifierError):
    """The external classifier did not answer in time."""


class MalformedPredictionError(ClassifierError):
    """The external classifier answered with an invalid line."""


class SoothingError(StepContextError, RuntimeError):
    """A soothing filter could not be applied."""
