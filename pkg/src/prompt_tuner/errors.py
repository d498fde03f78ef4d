"""Exception hierarchy shared across the package."""


class PromptTunerError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(PromptTunerError):
    """Input data violates a precondition (non-finite values, bad geometry, ...)."""


class DimensionError(PromptTunerError):
    """Array shapes are inconsistent with each other or with the configured geometry."""


class ConfigurationError(PromptTunerError):
    """A config value, parameter vector length, or override key is invalid."""


class DatasetError(PromptTunerError):
    """A dataset is unusable: missing classes, too few examples per class, ..."""


class FormatError(PromptTunerError):
    """A file does not follow its binary/JSON schema.

    `offset` is the byte offset of the first offending field, when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class QueryError(PromptTunerError):
    """A remote oracle query failed after all retry attempts."""

    def __init__(self, message, attempts=1, retryable=False):
        super().__init__(message)
        self.attempts = attempts
        self.retryable = retryable


class EstimationError(PromptTunerError):
    """A loss evaluation produced a non-finite value during gradient estimation.

    `side` identifies the offending perturbation ('+' or '-') and index.
    """

    def __init__(self, message, side=None, sample=None):
        super().__init__(message)
        self.side = side
        self.sample = sample
