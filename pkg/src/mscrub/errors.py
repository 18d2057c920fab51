"""Exception hierarchy shared across the package."""


class MscrubError(Exception):
    """Base class for all library errors."""


class InvalidInput(MscrubError):
    """Arguments violate a documented precondition."""


class ShapeMismatch(InvalidInput):
    """Operands have incompatible dimensions."""


class NotPSD(MscrubError):
    """A matrix expected to be positive semi-definite is not."""


class DegenerateClass(MscrubError):
    """A class has too few samples to estimate its moments."""


class Unsupported(MscrubError):
    """Requested configuration is outside supported limits."""


class DataFormatError(MscrubError):
    """An input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedFile(DataFormatError):
    """A serialized artifact is structurally invalid or truncated."""


class UnknownVersion(DataFormatError):
    """A serialized artifact declares a version this build cannot read."""


class NonConvergence(MscrubError):
    """An iterative solver exhausted its budget (CLI-level signal)."""
