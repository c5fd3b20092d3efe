"""Exception hierarchy shared across the package.

Every error raised on purpose derives from T2LError so the CLI can map
failures onto its exit-code contract (2 for usage/config problems, 1 for
runtime failures).
"""


class T2LError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(T2LError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(T2LError, ValueError):
    """Array shape incompatible with the configured dimensions."""


class CapacityError(T2LError, ValueError):
    """Sequence exceeds the backbone's position capacity."""


class NumericalInstabilityError(T2LError, ArithmeticError):
    """Covariance factorization failed even at the maximum jitter level."""


class TrainingDivergedError(T2LError, ArithmeticError):
    """Loss became non-finite during training.

    Carries the last finite checkpoint so callers can salvage the run.
    """

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class ParseError(T2LError, ValueError):
    """Malformed input file; the message names the offending line."""


class EmptyDatasetError(T2LError, ValueError):
    """No records survived ingestion."""


class DegenerateLabelError(T2LError, ValueError):
    """Labels carry a single class where two are required."""


class UndefinedMetricError(T2LError, ValueError):
    """Metric is undefined for the given inputs (e.g. one-class AUROC)."""


class UndefinedAcfError(UndefinedMetricError):
    """Autocorrelation undefined (constant series)."""


class CheckpointError(T2LError, ValueError):
    """Checkpoint file is corrupt or version-incompatible."""


class ConfigError(T2LError, ValueError):
    """Run configuration failed schema validation."""
