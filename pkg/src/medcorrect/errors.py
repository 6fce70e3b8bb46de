"""Exception hierarchy shared across the package."""


class MedcorrectError(Exception):
    """Base class for all package errors."""


class ParseError(MedcorrectError):
    """Malformed input file or line (names the offending line)."""


class ValidationError(MedcorrectError):
    """Data violates a documented invariant (names the offending record)."""


class ConfigError(MedcorrectError):
    """Invalid or inconsistent run configuration."""


class TransportError(MedcorrectError):
    """Remote call failed after retries, or the endpoint is unreachable."""


class RequestError(MedcorrectError):
    """Remote endpoint rejected the request or returned a malformed reply."""


class FailureCeilingExceeded(MedcorrectError):
    """Per-note failure rate of a run exceeded the configured ceiling."""
