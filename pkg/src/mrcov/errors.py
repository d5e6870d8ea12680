"""Exception types shared across the package."""


class MrcovError(Exception):
    """Base class for all mrcov errors."""


class InsufficientDataError(MrcovError):
    """A tick set or synchronized grid is too short for the requested operation."""


class TickParseError(MrcovError):
    """Malformed tick input; carries the offending 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidParameterError(MrcovError, ValueError):
    """A parameter is outside its admissible range."""


class NumericError(MrcovError):
    """A numerical routine failed to reach its tolerance; carries a residual estimate."""

    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual estimate {residual:.3e})"
        super().__init__(message)


class InvalidGroundTruthError(MrcovError):
    """A ground-truth object violates its invariants (e.g. non-positive durations)."""


class DegenerateVarianceError(MrcovError):
    """The asymptotic variance of the target entry is not strictly positive."""


class NotApplicableError(MrcovError):
    """The requested closed-form quantity is not available for this configuration."""
