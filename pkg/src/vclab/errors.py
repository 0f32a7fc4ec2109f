"""Exception types shared across the package.

User-facing validation failures (bad corpora, bad configs, unknown
speakers) derive from :class:`ValidationError` so the CLI can map them to
exit status 2; format/version problems on binary files get their own
types so tests can force them deliberately.
"""


class ValidationError(ValueError):
    """Input data or configuration violates a documented contract."""


class CorpusError(ValidationError):
    """A corpus file or manifest failed validation."""


class ConfigError(ValidationError):
    """A configuration value is inconsistent or inadmissible."""


class InsufficientDataError(ValidationError):
    """Too few samples to compute the requested statistic."""


class UnseenPhonemeError(ValidationError):
    """A frame is labeled with a phoneme that has no estimated prior."""


class FormatError(ValueError):
    """A binary file has the wrong magic or is structurally corrupt."""


class IncompatibleVersionError(FormatError):
    """A binary file has a recognized magic but an unsupported version."""


class NonFiniteLossError(RuntimeError):
    """Training produced a non-finite loss; carries the offending state."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state
