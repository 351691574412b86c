"""Exception types shared across the triage engine.

Every error a caller may want to branch on gets its own class; plain
ValueError is reserved for violated call preconditions.
"""


class TriageError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TriageError):
    """Invalid or inconsistent configuration."""


class SizeError(TriageError):
    """Dataset too small (or request too large) for the operation."""


class ColdStartError(TriageError):
    """Not enough assignment history to build a candidate roster."""


class DivergenceError(TriageError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class LabelSpaceMismatchError(TriageError):
    """Model outputs and dataset labels disagree."""


class IngestionError(TriageError):
    """Failure while talking to the issue tracker during ingestion."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class RateLimitError(IngestionError):
    """Tracker rate limit exhausted; carries the reset time (unix secs)."""

    def __init__(self, reset_at: int | None):
        super().__init__(f"rate limit exhausted, resets at {reset_at}", retryable=True)
        self.reset_at = reset_at


class UnknownRepoError(IngestionError):
    """Repository (or issue) does not exist on the tracker."""

    def __init__(self, message: str):
        super().__init__(message, retryable=False)


class ApiError(TriageError):
    """Tracker API write failed after any applicable retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ProtocolError(TriageError):
    """Malformed webhook payload (400-class)."""


class ModelFormatError(TriageError):
    """Model container is unreadable; `offset` points at the bad byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


class ChecksumMismatchError(ModelFormatError):
    pass
