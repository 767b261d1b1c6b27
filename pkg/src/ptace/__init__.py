"""Process-tensor MPO engine built with automated compression of environments."""

from __future__ import annotations

from .closures import ClosureSet, ExtractionKernel, ObservableSpec, finalize
from .errors import (
    DegenerateCompressionError,
    DimensionError,
    NumericalAbort,
    PTMPOError,
    UnsupportedConfigurationError,
    ValidationError,
)
from .liouville import ModeSpec, SystemPropagatorSchedule, devectorize, mode_propagator, vectorize
from .numerics import TruncatedSVD, matrix_exp, truncated_svd
from .propagate import TimeSeries, integrate_correlation_channel, propagate, propagate_two_baths
from .ptmpo import PTMPO, build_ace, combine_mode, load_ptmpo, save_ptmpo, sweep_backward, sweep_forward, trivial_pt

__version__ = "0.1.0"

__all__ = [
    "PTMPO",
    "ClosureSet",
    "DegenerateCompressionError",
    "DimensionError",
    "ExtractionKernel",
    "ModeSpec",
    "NumericalAbort",
    "ObservableSpec",
    "PTMPOError",
    "SystemPropagatorSchedule",
    "TimeSeries",
    "TruncatedSVD",
    "UnsupportedConfigurationError",
    "ValidationError",
    "build_ace",
    "combine_mode",
    "devectorize",
    "finalize",
    "integrate_correlation_channel",
    "load_ptmpo",
    "matrix_exp",
    "mode_propagator",
    "propagate",
    "propagate_two_baths",
    "save_ptmpo",
    "sweep_backward",
    "sweep_forward",
    "trivial_pt",
    "truncated_svd",
    "vectorize",
]
