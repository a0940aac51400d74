"""Private Hosmer-Lemeshow calibration statistic.

With ``eps' = eps / (L + 9)``:

1. the ECDF of predicted probabilities on a ``2**L``-point grid over [0, 1]
   is published with the tree mechanism at ``(L + 1) eps'`` (count-scale
   term noise ``Lap(1 / eps')``) and inverted at ``q / Q`` to get the cuts;
2. every group's expected and observed counts for both classes get one fresh
   ``Lap(1 / eps')`` term.  Replacing one record moves it between at most two
   groups, so only 8 of these statistics change: ``8 eps'``.

The cut-point curve is computed directly; its values equal what any
aggregation backend would publish with the same registry.  The group
statistics go through the chosen backend.

Groups are ``[t_0, t_1], (t_1, t_2], ..., (t_{Q-1}, t_Q]`` so that every
record falls in exactly one group.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from ..aggregation import make_backend, parse_backend_spec
from ..budget import BudgetAccount, as_fraction
from ..errors import ConfigError, DataError, InvalidParameterError
from ..grid import EvaluationGrid, make_uniform_grid
from ..noise import NoiseSpec, TreeNoiseRegistry, _check_epsilon, derive_seed, dp_ecdf, is_noiseless
from ..query import inverse_ecdf
from .chi2 import chi2_sf
from .roc import ScoredDataset

DEFAULT_FLOOR = 0.5


def hl_grid(depth: int) -> EvaluationGrid:
    """``2**depth`` evenly spaced points from 0 to 1 inclusive."""
    if depth < 1:
        raise InvalidParameterError("the cut-point grid needs L >= 1")
    n = 1 << depth
    grid = make_uniform_grid(0.0, 1.0, 1.0 / (n - 1))
    if grid.n_points != n:  # pragma: no cover - lattice snapping guards this
        raise AssertionError(f"expected {n} grid points, got {grid.n_points}")
    return grid


def group_of(p: float, cuts: Sequence[float]) -> int:
    """1-based group of probability ``p`` under cuts ``t_0 .. t_Q``."""
    Q = len(cuts) - 1
    for q in range(1, Q + 1):
        lo, hi = cuts[q - 1], cuts[q]
        if (p >= lo if q == 1 else p > lo) and p <= hi:
            return q
    raise DataError(f"probability {p} outside [{cuts[0]}, {cuts[-1]}]")


def _in_group(p: float, q: int, lo: float, hi: float) -> bool:
    return (p >= lo if q == 1 else p > lo) and p <= hi


def expected_kernel(q: int, lo: float, hi: float, s: int):
    """Predicted count of class ``s`` in group ``q``: ``p`` (s=1) or ``1 - p`` (s=0)."""

    def k(rec):
        p = rec[0]
        if not _in_group(p, q, lo, hi):
            return 0.0
        return p if s == 1 else 1.0 - p

    return k


def observed_kernel(q: int, lo: float, hi: float, s: int):
    def k(rec):
        p, y = rec
        return 1.0 if _in_group(p, q, lo, hi) and y == s else 0.0

    return k


@dataclass
class HlResult:
    H: float
    observed: np.ndarray  # shape (2, Q): [s, q-1]
    expected: np.ndarray
    cuts: List[float]
    df: int
    epsilon: float
    floored: bool
    floor: float
    ledger: list = field(default_factory=list)

    @property
    def Q(self) -> int:
        return len(self.cuts) - 1

    @property
    def p_value(self) -> Optional[float]:
        if self.df < 1:
            return None
        return chi2_sf(max(self.H, 0.0), self.df)

    def to_dict(self) -> dict:
        return {
            "H": self.H,
            "df": self.df,
            "p_value": self.p_value,
            "cuts": list(self.cuts),
            "O1": self.observed[1].tolist(),
            "E1": self.expected[1].tolist(),
            "O0": self.observed[0].tolist(),
            "E0": self.expected[0].tolist(),
            "epsilon": self.epsilon,
            "floored": self.floored,
            "floor": self.floor,
            "ledger": self.ledger,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "lo", "hi", "O1", "E1", "O0", "E0"])
        for q in range(self.Q):
            w.writerow(
                [q + 1, repr(self.cuts[q]), repr(self.cuts[q + 1])]
                + [repr(float(v)) for v in (self.observed[1, q], self.expected[1, q], self.observed[0, q], self.expected[0, q])]
            )
        w.writerow(["H", repr(self.H), "df", self.df, "floored", int(self.floored), ""])
        return buf.getvalue()


def hl_from_counts(observed: np.ndarray, expected: np.ndarray, floor: float = DEFAULT_FLOOR):
    """``H = sum (O - E)^2 / max(E, floor)``; returns (H, any_floored)."""
    denom = np.maximum(expected, floor)
    return float(np.sum((observed - expected) ** 2 / denom)), bool(np.any(expected < floor))


def group_counts(data: ScoredDataset, cuts: Sequence[float]):
    """Plaintext (O, E) arrays of shape (2, Q) for fixed cuts."""
    Q = len(cuts) - 1
    O = np.zeros((2, Q))
    E = np.zeros((2, Q))
    for p, y in zip(data.scores.tolist(), data.labels.tolist()):
        q = group_of(p, cuts) - 1
        O[y, q] += 1
        E[1, q] += p
        E[0, q] += 1.0 - p
    return O, E


def hl_statistic_dp(
    data: ScoredDataset,
    Q: int,
    epsilon: float,
    L: int,
    seed: int = 0,
    backend: str = "plaintext",
    budget: Optional[BudgetAccount] = None,
    floor: float = DEFAULT_FLOOR,
    psi: Optional[float] = None,
) -> HlResult:
    if Q < 2:
        raise InvalidParameterError(f"need at least 2 groups, got {Q}")
    if not floor > 0:
        raise InvalidParameterError("the denominator floor must be positive")
    exact_eps = epsilon
    epsilon = _check_epsilon(epsilon)
    if data.n == 0:
        raise DataError("empty dataset")
    if np.any((data.scores < 0) | (data.scores > 1)):
        raise DataError("predicted probabilities must lie in [0, 1]")
    if parse_backend_spec(backend)[0] == "fss":
        raise ConfigError("group statistics are not threshold kernels; use plaintext or addshare")

    grid = hl_grid(L)
    psi = 1.0 / (4 * grid.n_points) if psi is None else float(psi)
    noiseless = is_noiseless(epsilon)
    eps_unit = Fraction(0) if noiseless else as_fraction(exact_eps) / (L + 9)
    eps_cuts = epsilon if noiseless else float((L + 1) * eps_unit)
    unit_scale = 0.0 if noiseless else float(1 / eps_unit)

    registry = TreeNoiseRegistry.for_ecdf(derive_seed(seed, 0x484C), L, eps_cuts)
    local = BudgetAccount()
    curve = dp_ecdf(data.scores, grid, eps_cuts, registry)
    local.charge("hl.cuts", (L + 1) * eps_unit)

    cuts = [0.0]
    for q in range(1, Q):
        # the private curve need not be monotone; keep the cuts ordered
        t = min(max(inverse_ecdf(curve, q / Q, psi, 0.0, 1.0), cuts[-1]), 1.0)
        cuts.append(t)
    cuts.append(1.0)

    be = make_backend(backend, data.records(), registry, seed=derive_seed(seed, 0x4147))
    O = np.zeros((2, Q))
    E = np.zeros((2, Q))
    for q in range(1, Q + 1):
        lo, hi = cuts[q - 1], cuts[q]
        for s in (0, 1):
            registry.register((-q, s), NoiseSpec.laplace(unit_scale))
            registry.register((-q, s + 2), NoiseSpec.laplace(unit_scale))
            E[s, q - 1] = be.u_stat_count(expected_kernel(q, lo, hi, s), [(-q, s)])
            O[s, q - 1] = be.u_stat_count(observed_kernel(q, lo, hi, s), [(-q, s + 2)])
    local.charge("hl.groups", 8 * eps_unit)

    H, floored = hl_from_counts(O, E, floor)
    if budget is not None:
        for c in local.ledger:
            budget.charge(c.tag, c.epsilon)
    return HlResult(H, O, E, cuts, Q - 2, epsilon, floored, floor, local.to_list())
