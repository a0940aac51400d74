"""Chi-square upper tail through the regularized incomplete gamma function."""

from __future__ import annotations

import math

from ..errors import InvalidParameterError

_EPS = 1e-16
_TINY = 1e-300
_MAX_TERMS = 10_000


def _lower_series(a: float, z: float) -> float:
    """Regularized lower incomplete gamma P(a, z); converges fast for z < a + 1."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= z / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-z + a * math.log(z) - math.lgamma(a))


def _upper_fraction(a: float, z: float) -> float:
    """Regularized upper incomplete gamma Q(a, z) by modified Lentz; for z >= a + 1."""
    b = z + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-z + a * math.log(z) - math.lgamma(a))


def gamma_q(a: float, z: float) -> float:
    if a <= 0:
        raise InvalidParameterError("shape must be positive")
    if z < 0:
        raise InvalidParameterError("argument must be non-negative")
    if z == 0:
        return 1.0
    if z < a + 1.0:
        return 1.0 - _lower_series(a, z)
    return _upper_fraction(a, z)


def chi2_sf(x: float, df: int) -> float:
    """P[chi2_df >= x]."""
    if df < 1:
        raise InvalidParameterError(f"degrees of freedom must be >= 1, got {df}")
    if x < 0:
        raise InvalidParameterError("statistic must be non-negative; clamp noisy values first")
    return gamma_q(df / 2.0, x / 2.0)
