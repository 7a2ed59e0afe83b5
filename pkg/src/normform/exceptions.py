"""Exception types raised across the package."""


class NormformError(Exception):
    """Base class for all package errors."""


class ConfigError(NormformError, ValueError):
    """Invalid or inconsistent run configuration."""


class IntegrationBlowupError(NormformError, ArithmeticError):
    """A trajectory left the finite region during time stepping.

    Attributes
    ----------
    time_index : int
        First stored time index at which the state was non-finite or
        exceeded the blow-up threshold.
    trajectory_index : int or None
        Index of the offending trajectory when integrating an ensemble.
    """

    def __init__(self, message, time_index=None, trajectory_index=None):
        super().__init__(message)
        self.time_index = time_index
        self.trajectory_index = trajectory_index


class DatasetConstructionError(NormformError):
    """Too many sampled trajectories blew up to assemble a dataset."""

    def __init__(self, message, failure_rate=None):
        super().__init__(message)
        self.failure_rate = failure_rate


class TrainingDivergenceError(NormformError, ArithmeticError):
    """A loss term became non-finite during training.

    ``term`` is the 1-based loss index (1..6), or 0 when the total is bad.
    ``history`` holds the loss rows recorded before the divergence.
    """

    def __init__(self, message, term=None, history=None):
        super().__init__(message)
        self.term = term
        self.history = history if history is not None else []


class OptimizerError(NormformError, ArithmeticError):
    """Non-finite gradient handed to the optimizer."""

    def __init__(self, message, tensor=None):
        super().__init__(message)
        self.tensor = tensor


class NoOscillationError(NormformError, ValueError):
    """The series carries no oscillatory content to estimate a period from."""


class RankDeficiencyError(NormformError, ValueError):
    """Requested truncation rank exceeds the numerical rank of the data."""

    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank
