"""Applications built on private curves: ROC curves and the Hosmer-Lemeshow statistic."""

from .chi2 import chi2_sf, gamma_q
from .hl import HlResult, group_counts, hl_from_counts, hl_grid, hl_statistic_dp
from .roc import (
    RocCurve,
    ScoredDataset,
    direct_roc,
    dp_roc,
    roc_from_points,
    roc_symmetric_difference,
    smooth_roc,
)

__all__ = [
    "HlResult",
    "RocCurve",
    "ScoredDataset",
    "chi2_sf",
    "direct_roc",
    "dp_roc",
    "gamma_q",
    "group_counts",
    "hl_from_counts",
    "hl_grid",
    "hl_statistic_dp",
    "roc_from_points",
    "roc_symmetric_difference",
    "smooth_roc",
]
