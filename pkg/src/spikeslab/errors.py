"""Exception hierarchy shared by every module."""


class SpikeSlabError(Exception):
    """Base class for all package errors."""


class DomainError(SpikeSlabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DimensionError(SpikeSlabError, ValueError):
    """Array shapes or index sets are inconsistent."""


class ConvergenceError(SpikeSlabError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class NumericalError(SpikeSlabError, RuntimeError):
    """A factorization or evaluation produced an unusable result."""


class ContractViolation(SpikeSlabError, RuntimeError):
    """A sampler observed a density ratio outside its declared bound.

    The offending subset and log-ratio are kept as attributes so callers
    (the CLI in particular) can report them.
    """

    def __init__(self, message, subset=None, log_ratio=None):
        super().__init__(message)
        self.subset = subset
        self.log_ratio = log_ratio


class AnnealingError(SpikeSlabError, RuntimeError):
    """An annealing stage produced a ratio estimate with runaway variance."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class OracleError(SpikeSlabError, RuntimeError):
    """The enumeration oracle refused or failed to produce a reliable answer."""

    def __init__(self, message, subset=None):
        super().__init__(message)
        self.subset = subset
