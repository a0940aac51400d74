"""Differentially private ECDFs with tree-structured noise.

Core pieces: evaluation grids (:mod:`grid`), the tree mechanism and noise
registry (:mod:`noise`), monotone smoothing (:mod:`smoothing`), aggregation
backends including function secret sharing (:mod:`aggregation`, :mod:`fss`),
curve queries (:mod:`query`) and the ROC / Hosmer-Lemeshow applications
(:mod:`apps`).
"""

__version__ = "0.1.0"

from .budget import BudgetAccount
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DpEcdfError,
)
from .grid import EvaluationGrid, make_explicit_grid, make_geometric_grid, make_uniform_grid, path_indices
from .noise import (
    NOISELESS,
    ContinualReleaseState,
    PrivateEcdf,
    TreeNoiseRegistry,
    adjacent_shift_vector,
    continual_release,
    decompose_interval,
    dp_ecdf,
    noiseless_ecdf,
)
from .query import eval_at, inverse_ecdf
from .smoothing import SmoothedEcdf, smooth

__all__ = [
    "NOISELESS",
    "BudgetAccount",
    "ConfigError",
    "ContinualReleaseState",
    "ConvergenceError",
    "DataError",
    "DpEcdfError",
    "EvaluationGrid",
    "PrivateEcdf",
    "SmoothedEcdf",
    "TreeNoiseRegistry",
    "adjacent_shift_vector",
    "continual_release",
    "decompose_interval",
    "dp_ecdf",
    "eval_at",
    "inverse_ecdf",
    "make_explicit_grid",
    "make_geometric_grid",
    "make_uniform_grid",
    "noiseless_ecdf",
    "path_indices",
    "smooth",
]
