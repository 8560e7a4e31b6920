from beartype.typing import Optional


class StigTrendError(Exception):
    """Base error. ``exit_code`` is what the CLI exits with for this family."""

    exit_code = 1

    def __init__(self, message: str, details: Optional[str] = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = details

    def __str__(self) -> str:
        if self.details:
            return f"{self.message} ({self.details})"
        return self.message


class StigTrendConfigError(StigTrendError):
    exit_code = 2


class StigTrendDataError(StigTrendError):
    exit_code = 3


class StigTrendRuntimeError(StigTrendError):
    exit_code = 4


class InvalidParameterError(StigTrendConfigError):
    pass


class InsufficientDataError(StigTrendDataError):
    pass


class DegenerateTrackError(StigTrendDataError):
    """The unbiased track is zero everywhere, so no prototype can be fitted."""


class DegenerateNormalizationError(StigTrendDataError):
    pass


class EmptyCorpusError(StigTrendDataError):
    pass
