"""Monotone smoothing of a private curve through tree-node corrections.

The smoothed value at grid index ``i`` is the private value plus the
corrections on the leaf-to-root path of ``i``.  We pick the corrections of
minimum 1-norm or squared 2-norm such that the smoothed curve over the chosen
index set is non-decreasing, non-negative at its first point and at most one at
its last.  Smoothing only reads the published curve, so it costs no budget.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameterError, UndefinedRatioError
from .grid import EvaluationGrid
from .ipm import SolverConfig, solve
from .noise import PrivateEcdf


def level_offsets(depth: int) -> np.ndarray:
    """Column offset of each tree level in the flat correction vector (leaves first)."""
    sizes = [1 << (depth - l) for l in range(depth + 1)]
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)


def n_corrections(depth: int) -> int:
    return (1 << (depth + 1)) - 1


def path_columns(depth: int, indices: Sequence[int]) -> np.ndarray:
    """``cols[k, l]`` = flat column of node ``(ceil(i_k / 2**l), l)``."""
    idx = np.asarray(indices, dtype=np.int64)
    offs = level_offsets(depth)
    cols = np.empty((len(idx), depth + 1), dtype=np.int64)
    for l in range(depth + 1):
        cols[:, l] = offs[l] + (-((-idx) >> l)) - 1
    return cols


def reconstruct(base: np.ndarray, nu: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """``base_k + sum_l nu[cols[k, l]]``, summed level by level in a fixed order."""
    acc = np.array(base, dtype=float)
    for l in range(cols.shape[1]):
        acc += nu[cols[:, l]]
    return acc


@dataclass(frozen=True)
class SmoothedEcdf:
    grid: EvaluationGrid
    eval_set: Tuple[int, ...]
    values: np.ndarray
    corrections: np.ndarray
    objective: float
    p: int
    iterations: int = 0

    @property
    def indices(self) -> Tuple[int, ...]:
        return self.eval_set

    def thresholds(self) -> np.ndarray:
        return np.array([self.grid.points[i - 1] for i in self.eval_set])

    def correction(self, j: int, l: int) -> float:
        depth = self.grid.tree_depth
        return float(self.corrections[level_offsets(depth)[l] + j - 1])

    def to_dict(self) -> dict:
        return {
            "B": list(self.eval_set),
            "values": [float(v) for v in self.values],
            "objective": float(self.objective),
            "p": self.p,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "value"])
        for t, v in zip(self.thresholds(), self.values):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()


def _is_feasible(vals: np.ndarray) -> bool:
    return bool(vals[0] >= 0.0 and vals[-1] <= 1.0 and np.all(np.diff(vals) >= 0.0))


def _constraint_rows(cols: np.ndarray, n_var: int) -> sp.csr_matrix:
    """Rows of ``A nu <= rhs``: lower bound, monotone differences, upper bound."""
    K, width = cols.shape
    rows, cs, vals = [], [], []

    def put(r, k, sign):
        rows.extend([r] * width)
        cs.extend(cols[k])
        vals.extend([sign] * width)

    put(0, 0, -1.0)
    for k in range(K - 1):
        put(k + 1, k, 1.0)
        put(k + 1, k + 1, -1.0)
    put(K, K - 1, 1.0)
    A = sp.csr_matrix((vals, (rows, cs)), shape=(K + 1, n_var))
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def _nudge(base_k, nu, cols_k, leaf, target, direction):
    """Move ``nu[leaf]`` until the reconstructed value is on the right side of ``target``.

    The step starts at one ulp of the target and doubles, since single-ulp
    moves of a large correction can be absorbed by rounding in the sum.
    """

    def value():
        return reconstruct(base_k, nu, cols_k)[0]

    step = np.spacing(abs(target)) or np.finfo(float).tiny
    while (value() < target) if direction > 0 else (value() > target):
        nu[leaf] += direction * step
        step *= 2.0
    return value()


def _repair(base, nu, cols, leaf_cols):
    """Nudge leaf corrections until the reconstructed curve is exactly feasible."""
    for _ in range(100):
        vals = reconstruct(base, nu, cols)
        if _is_feasible(vals):
            return vals
        floor = 0.0
        for k in range(len(vals)):
            if vals[k] < floor:
                nu[leaf_cols[k]] += floor - vals[k]
                vals[k] = _nudge(base[k:k + 1], nu, cols[k:k + 1], leaf_cols[k], floor, +1)
            floor = vals[k]
        cap = 1.0
        for k in range(len(vals) - 1, -1, -1):
            if vals[k] > cap:
                nu[leaf_cols[k]] -= vals[k] - cap
                vals[k] = _nudge(base[k:k + 1], nu, cols[k:k + 1], leaf_cols[k], cap, -1)
            cap = vals[k]
    raise AssertionError("could not restore exact feasibility")  # pragma: no cover


def smooth(
    base: PrivateEcdf,
    eval_set: Optional[Sequence[int]] = None,
    p: int = 2,
    config: SolverConfig = SolverConfig(),
) -> SmoothedEcdf:
    """Minimum-norm tree corrections making ``base`` monotone and [0, 1]-bounded over ``eval_set``."""
    if p not in (1, 2):
        raise InvalidParameterError(f"p must be 1 or 2, got {p}")
    grid = base.grid
    B = tuple(base.indices if eval_set is None else (int(i) for i in eval_set))
    if not B:
        raise InvalidParameterError("evaluation set must be non-empty")
    if any(b2 <= b1 for b1, b2 in zip(B, B[1:])):
        raise InvalidParameterError("evaluation set must be sorted without duplicates")
    missing = set(B) - set(base.indices)
    if missing:
        raise InvalidParameterError(f"curve has no value at indices {sorted(missing)[:5]}")

    depth = grid.tree_depth
    n_var = n_corrections(depth)
    pos = {i: k for k, i in enumerate(base.indices)}
    f_hat = np.array([base.values[pos[i]] for i in B], dtype=float)
    cols = path_columns(depth, B)

    if _is_feasible(f_hat):
        nu = np.zeros(n_var)
        return SmoothedEcdf(grid, B, reconstruct(f_hat, nu, cols), nu, 0.0, p)

    K = len(B)
    A = _constraint_rows(cols, n_var)
    rhs = np.concatenate([[f_hat[0]], f_hat[1:] - f_hat[:-1], [1.0 - f_hat[-1]]])

    # strictly feasible start: put the curve on k/(K+1) using leaf corrections only
    leaf_cols = cols[:, 0]
    nu0 = np.zeros(n_var)
    nu0[leaf_cols] = np.arange(1, K + 1) / (K + 1) - f_hat

    if p == 2:
        res = solve(np.full(n_var, 2.0), np.zeros(n_var), A, rhs, np.zeros(n_var, bool), nu0, config)
        nu = res.x
    else:
        A2 = sp.hstack([A, -A]).tocsr()
        x0 = np.concatenate([np.maximum(nu0, 0.0), np.maximum(-nu0, 0.0)]) + 1.0
        res = solve(np.zeros(2 * n_var), np.ones(2 * n_var), A2, rhs, np.ones(2 * n_var, bool), x0, config)
        nu = res.x[:n_var] - res.x[n_var:]

    nu = np.array(nu, dtype=float)
    values = _repair(f_hat, nu, cols, leaf_cols)
    objective = float(np.sum(np.abs(nu) ** p))
    return SmoothedEcdf(grid, B, values, nu, objective, p, res.iterations)


def mse_ratio(truth: PrivateEcdf, dp: PrivateEcdf, sm: SmoothedEcdf, eval_set: Optional[Sequence[int]] = None) -> float:
    """``||F - F_smooth||^2 / ||F - F_dp||^2`` over the evaluation set."""
    B = tuple(sm.eval_set if eval_set is None else eval_set)

    def pick(curve_idx, values, which):
        pos = {i: k for k, i in enumerate(curve_idx)}
        return np.array([values[pos[i]] for i in which], dtype=float)

    f = pick(truth.indices, truth.values, B)
    f_dp = pick(dp.indices, dp.values, B)
    f_sm = pick(sm.eval_set, sm.values, B)
    den = float(np.sum((f - f_dp) ** 2))
    if den == 0.0:
        raise UndefinedRatioError("private curve equals the true curve; ratio undefined")
    return float(np.sum((f - f_sm) ** 2)) / den
