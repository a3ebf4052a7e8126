"""Mixture propagation of nonlinear stochastic systems with certified TV bounds."""

import os

# TBB shipped in some environments is too old for numba; OpenMP is always fine.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from tvprop.errors import (  # noqa: E402
    ConfigurationError,
    HighProbRegionError,
    ParameterError,
    StateError,
    TVPropError,
)
from tvprop.interval import Box  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Box",
    "ConfigurationError",
    "HighProbRegionError",
    "ParameterError",
    "StateError",
    "TVPropError",
]
