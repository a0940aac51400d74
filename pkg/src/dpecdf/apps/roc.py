"""Private ROC curves from two tree-mechanism count curves.

An instance is predicted positive at threshold ``t`` when its score is
``<= t`` (low scores mean "likely positive").  TP and FP counts at every grid
threshold are published with independent registries, each at half the budget,
and both rates are normalized by their own private value at the last
threshold, so no separate class totals are released.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Tuple

import numpy as np

from ..budget import BudgetAccount, as_fraction
from ..errors import DataError, DegenerateClassError, NonMonotoneError
from ..grid import EvaluationGrid
from ..noise import (
    PrivateEcdf,
    TreeNoiseRegistry,
    _check_epsilon,
    _check_tree_scale,
    derive_seed,
    ecdf_counts,
    is_noiseless,
    tree_noise_for_indices,
)
from ..smoothing import smooth


@dataclass(frozen=True)
class ScoredDataset:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        y = np.asarray(self.labels)
        if s.shape != y.shape or s.ndim != 1:
            raise DataError("scores and labels must be 1-d and of equal length")
        if not np.all(np.isfinite(s)):
            raise DataError("scores must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        s.setflags(write=False)
        y = y.astype(np.int8)
        y.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return int(self.scores.size)

    @property
    def positive_fraction(self) -> float:
        return float(self.labels.mean()) if self.n else 0.0

    def records(self):
        return list(zip(self.scores.tolist(), self.labels.tolist()))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    tp_curve: object
    fp_curve: object
    tp_total: float
    fp_total: float
    smoothed: bool = False

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.fpr) >= 0) and np.all(np.diff(self.tpr) >= 0))

    def to_dict(self) -> dict:
        return {
            "fpr": self.fpr.tolist(),
            "tpr": self.tpr.tolist(),
            "thresholds": self.thresholds.tolist(),
            "tp_total": self.tp_total,
            "fp_total": self.fp_total,
            "smoothed": self.smoothed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        w.writerow(["", repr(float(self.fpr[0])), repr(float(self.tpr[0]))])
        for t, f, r in zip(self.thresholds, self.fpr[1:], self.tpr[1:]):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(r))])
        return buf.getvalue()


def _rates(values: np.ndarray, what: str) -> np.ndarray:
    total = float(values[-1])
    if total == 0.0:
        raise DegenerateClassError(f"{what} curve is zero at the last threshold; rates undefined")
    return np.concatenate([[0.0], values / total])


def _assemble(tp, fp, grid_thresholds, smoothed, scale=None) -> RocCurve:
    # rates from count-scale values when available, so noiseless rates are exact count ratios
    tpv = np.asarray(tp.values if scale is None else scale[0], dtype=float)
    fpv = np.asarray(fp.values if scale is None else scale[1], dtype=float)
    return RocCurve(
        _rates(fpv, "false-positive"),
        _rates(tpv, "true-positive"),
        np.asarray(grid_thresholds, dtype=float),
        tp,
        fp,
        float(tpv[-1]),
        float(fpv[-1]),
        smoothed,
    )


def dp_roc(
    data: ScoredDataset,
    grid: EvaluationGrid,
    epsilon: float,
    seed: int = 0,
    registries: Optional[Tuple[TreeNoiseRegistry, TreeNoiseRegistry]] = None,
    budget: Optional[BudgetAccount] = None,
) -> RocCurve:
    """ROC curve whose TP and FP count curves are each ``epsilon / 2``-DP."""
    epsilon = _check_epsilon(epsilon)
    if data.n == 0:
        raise DataError("empty dataset")
    pos = data.scores[data.labels == 1]
    neg = data.scores[data.labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise DegenerateClassError("ROC curves need both positive and negative instances")
    depth = grid.tree_depth
    half = epsilon / 2
    if registries is None:
        registries = tuple(TreeNoiseRegistry.for_ecdf(derive_seed(seed, 0x524F43, k), depth, half) for k in (0, 1))
    idx = range(1, grid.n_points + 1)
    curves, counts = [], []
    for scores, reg in zip((pos, neg), registries):
        _check_tree_scale(reg, depth, half)
        c = ecdf_counts(scores, grid) + tree_noise_for_indices(reg, depth, idx)
        counts.append(c)
        curves.append(PrivateEcdf(grid, c / data.n, data.n, half))
    if budget is not None:
        share = Fraction(0) if is_noiseless(epsilon) else as_fraction(epsilon) / 2
        budget.charge("roc.tp", share)
        budget.charge("roc.fp", share)
    return _assemble(curves[0], curves[1], grid.as_array(), smoothed=False, scale=counts)


def smooth_roc(curve: RocCurve, p: int = 2) -> RocCurve:
    """Project both count curves onto monotone curves, then renormalize."""
    tp = smooth(curve.tp_curve, p=p)
    fp = smooth(curve.fp_curve, p=p)
    n = curve.tp_curve.n
    return _assemble(tp, fp, curve.thresholds, smoothed=True, scale=(tp.values * n, fp.values * n))


def roc_from_points(fpr: Sequence[float], tpr: Sequence[float]) -> RocCurve:
    """Curve given directly by its vertices (reference curves in tests and experiments)."""
    f = np.asarray(fpr, dtype=float)
    t = np.asarray(tpr, dtype=float)
    return RocCurve(f, t, np.full(len(f) - 1, np.nan), None, None, 1.0, 1.0, smoothed=True)


def _limits(xs: np.ndarray, ys: np.ndarray, u: float, v: float) -> Tuple[float, float]:
    """Values at ``u`` (right limit) and ``v`` (left limit) of the segment spanning ``(u, v)``."""
    k = int(np.searchsorted(xs, u, side="right")) - 1
    k = min(max(k, 0), len(xs) - 2)
    x0, x1, y0, y1 = xs[k], xs[k + 1], ys[k], ys[k + 1]
    if x1 == x0:
        return float(y1), float(y1)
    slope = (y1 - y0) / (x1 - x0)
    return float(y0 + slope * (u - x0)), float(y0 + slope * (v - x0))


def _abs_linear_area(d0: float, d1: float, width: float) -> float:
    if d0 * d1 >= 0:
        return width * (abs(d0) + abs(d1)) / 2.0
    return width * (d0 * d0 + d1 * d1) / (2.0 * (abs(d0) + abs(d1)))


def roc_symmetric_difference(a: RocCurve, b: RocCurve) -> float:
    """Area between two monotone ROC curves viewed as functions of FPR.

    Both curves are linear between their vertices; vertical runs (several
    vertices at one FPR) are jumps and contribute no area.
    """
    for c, name in ((a, "first"), (b, "second")):
        if not c.is_monotone():
            raise NonMonotoneError(f"{name} ROC curve is not monotone; smooth it first")
    breaks = np.union1d(a.fpr, b.fpr)
    total = 0.0
    for u, v in zip(breaks[:-1], breaks[1:]):
        au, av = _limits(a.fpr, a.tpr, u, v)
        bu, bv = _limits(b.fpr, b.tpr, u, v)
        total += _abs_linear_area(au - bu, av - bv, v - u)
    return total


def direct_roc(data: ScoredDataset, grid: EvaluationGrid) -> RocCurve:
    """Exact curve on the same grid (no noise, no budget)."""
    from ..noise import NOISELESS

    return dp_roc(data, grid, NOISELESS)
