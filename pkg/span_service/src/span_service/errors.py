"""Exception types shared across the service."""


class SpanServiceError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SpanServiceError):
    """Input data violates a documented invariant."""


class ParseError(SpanServiceError):
    """A file could not be read in the expected format."""


class TrainingError(SpanServiceError):
    """A training job could not be set up or completed."""
