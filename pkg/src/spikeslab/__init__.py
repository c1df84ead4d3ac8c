"""Spike-and-slab posterior sampling for sparse linear regression."""

from .errors import (
    AnnealingError,
    ContractViolation,
    ConvergenceError,
    DimensionError,
    DomainError,
    NumericalError,
    OracleError,
    SpikeSlabError,
)
from .model import Diffuse, Instance, PriorSpec, draw_instance, make_rng, verify_rip

__version__ = "0.1.0"

__all__ = [
    "AnnealingError",
    "ContractViolation",
    "ConvergenceError",
    "DimensionError",
    "DomainError",
    "NumericalError",
    "OracleError",
    "SpikeSlabError",
    "Diffuse",
    "Instance",
    "PriorSpec",
    "draw_instance",
    "make_rng",
    "verify_rip",
]
