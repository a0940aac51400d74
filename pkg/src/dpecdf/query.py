"""Reading private curves at arbitrary points and inverting them by bisection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InvalidParameterError
from .noise import PrivateEcdf
from .smoothing import SmoothedEcdf

Curve = Union[PrivateEcdf, SmoothedEcdf]


def _support(curve: Curve):
    return curve.thresholds(), np.asarray(curve.values, dtype=float)


def eval_at(curve: Curve, t: float) -> float:
    """Value at the largest curve threshold ``<= t``; below the first threshold, the first value."""
    taus, vals = _support(curve)
    k = int(np.searchsorted(taus, float(t), side="right")) - 1
    return float(vals[max(k, 0)])


def eval_many(curve: Curve, ts) -> np.ndarray:
    taus, vals = _support(curve)
    k = np.searchsorted(taus, np.asarray(ts, dtype=float), side="right") - 1
    return vals[np.maximum(k, 0)]


def bisection_steps(lo: float, hi: float, psi: float) -> int:
    """Halvings needed to bring ``hi - lo`` down to at most ``psi``."""
    width, steps = float(hi) - float(lo), 0
    while width > psi:
        width /= 2.0
        steps += 1
    return steps


@dataclass(frozen=True)
class InverseResult:
    value: float
    iterations: int
    lo: float
    hi: float


def inverse_ecdf_trace(
    curve: Curve, p: float, psi: float, lo: Optional[float] = None, hi: Optional[float] = None
) -> InverseResult:
    """Binary search for the smallest ``t`` with ``curve(t) >= p``.

    Works on unsmoothed curves too, but the result is only guaranteed to sit
    within ``psi`` of the generalized inverse when the curve is monotone.
    """
    if not psi > 0:
        raise InvalidParameterError(f"psi must be positive, got {psi}")
    lo = curve.grid.lo if lo is None else float(lo)
    hi = curve.grid.hi if hi is None else float(hi)
    if not lo < hi:
        raise InvalidParameterError(f"need lo < hi, got [{lo}, {hi}]")
    taus, vals = _support(curve)
    a, b = lo, hi
    # the width is halved exactly, so the loop count does not drift with rounding in a + b
    width, it = hi - lo, 0
    while width > psi:
        m = (a + b) / 2.0
        k = int(np.searchsorted(taus, m, side="right")) - 1
        if vals[max(k, 0)] < p:
            a = m
        else:
            b = m
        width /= 2.0
        it += 1
    return InverseResult((a + b) / 2.0, it, a, b)


def inverse_ecdf(curve: Curve, p: float, psi: float, lo: Optional[float] = None, hi: Optional[float] = None) -> float:
    return inverse_ecdf_trace(curve, p, psi, lo, hi).value
