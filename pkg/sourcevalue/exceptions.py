"""Exception hierarchy for the Source Value engine."""


class SourceValueError(Exception):
    """Base class for all engine errors."""


class ConfigError(SourceValueError):
    """Invalid configuration, including guards such as the exact-method player limit."""


class DatasetError(SourceValueError):
    """Ingestion, corruption or split failures."""


class LearnerError(SourceValueError):
    """Fitting, stepping or evaluation failures."""


class ValuationError(SourceValueError):
    """Failures while estimating or post-processing values."""
