"""Exception hierarchy shared across the pipeline."""


class EcogCritError(Exception):
    """Base class for all package errors."""


class InvalidInputError(EcogCritError, ValueError):
    """An argument violates an operation's precondition."""


class ValidationError(EcogCritError, ValueError):
    """Dataset or configuration content is inconsistent."""


class FormatError(ValidationError):
    """On-disk file does not match its declared layout."""


class DatasetLoadError(EcogCritError, OSError):
    """A file required by the dataset is missing or unreadable."""

    def __init__(self, path, reason="missing file"):
        self.path = str(path)
        super().__init__(f"{reason}: {self.path}")


class DegenerateGraphError(EcogCritError, ValueError):
    """Connectivity graph has no nonzero edge."""


class TrainingError(EcogCritError, RuntimeError):
    """Model fitting cannot proceed (e.g. a single class)."""


class UndefinedMetricError(EcogCritError, ValueError):
    """Metric is undefined for the given labels."""


class InsufficientDataError(EcogCritError, ValueError):
    """Too few usable observations for a statistical test."""


class ConfigurationError(EcogCritError, ValueError):
    """Pipeline or generator configuration cannot be satisfied."""


class EpochBoundsError(InvalidInputError):
    """One or more epoch windows fall outside the recording."""

    def __init__(self, trial_ids):
        self.trial_ids = list(trial_ids)
        super().__init__(f"epoch window out of bounds for trial(s): {self.trial_ids}")


class StageError(EcogCritError, RuntimeError):
    """Wraps a failure inside a pipeline stage with the stage name."""

    def __init__(self, stage, entity, cause):
        self.stage = stage
        self.entity = entity
        self.cause = cause
        super().__init__(f"stage '{stage}' failed for {entity}: {cause}")
