"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid generation or experiment configuration."""


class DimensionError(ValueError):
    """Array argument has the wrong length or shape."""


class NonConvergedError(RuntimeError):
    """The conic solver stopped without a trustworthy optimal/infeasible verdict.

    Callers must not treat this as either outcome; branch-and-bound aborts the
    instance rather than risk a wrong prune.
    """

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class BudgetExceededError(RuntimeError):
    """Node or time budget exhausted mid-search; carries partial stats."""

    def __init__(self, message, stats=None, trace=None):
        super().__init__(message)
        self.stats = stats
        self.trace = trace


class PolicyFileError(ValueError):
    """Policy file is corrupt, truncated, or has an unsupported version."""


class ManifestError(ValueError):
    """Dataset manifest conflicts with the requested configuration."""


class CsvParseError(ValueError):
    """Results CSV is malformed; the message carries the offending row."""
