"""Ordered evaluation grids and their dyadic index arithmetic.

Grid indices are 1-based throughout, so ``grid.points[i - 1]`` is the
threshold with index ``i``.  A grid with ``N`` points sits under a binary tree
of depth ``L = ceil(log2 N)``; leaves ``N + 1 .. 2**L`` are virtual and alias
the last point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .errors import InvalidDomainError, InvalidParameterError

NodeIndex = Tuple[int, int]

# Relative tolerance used to decide whether a bound already sits on the lattice.
_SNAP = 1e-9


def tree_depth_for(n_points: int) -> int:
    if n_points < 1:
        raise InvalidParameterError("a grid needs at least one point")
    return (n_points - 1).bit_length()


def ceil_div_pow2(i: int, level: int) -> int:
    """ceil(i / 2**level) for non-negative ints."""
    return -((-i) >> level)


@dataclass(frozen=True)
class EvaluationGrid:
    points: Tuple[float, ...]
    kind: str = "explicit"
    psi: float | None = None
    lo: float = field(init=False)
    hi: float = field(init=False)

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if not pts:
            raise InvalidParameterError("a grid needs at least one point")
        if not all(math.isfinite(p) for p in pts):
            raise InvalidDomainError("grid points must be finite")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise InvalidDomainError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "lo", pts[0])
        object.__setattr__(self, "hi", pts[-1])

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def tree_depth(self) -> int:
        return tree_depth_for(len(self.points))

    def __len__(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def tau(self, i: int) -> float:
        """Threshold at 1-based index ``i``; virtual padding aliases the last point."""
        if not 1 <= i <= 1 << self.tree_depth:
            raise IndexError(f"grid index {i} outside [1, {1 << self.tree_depth}]")
        return self.points[min(i, self.n_points) - 1]

    def index_of_value(self, value: float) -> int:
        """Smallest 1-based index ``k`` with ``value <= tau_k`` (``N + 1`` if none)."""
        return int(np.searchsorted(self.as_array(), value, side="left")) + 1

    def to_dict(self) -> dict:
        return {
            "lo": self.lo,
            "hi": self.hi,
            "kind": self.kind,
            "psi": self.psi,
            "points": list(self.points),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "EvaluationGrid":
        kind = obj.get("kind", "explicit")
        if kind == "uniform" and "points" not in obj:
            return make_uniform_grid(obj["lo"], obj["hi"], obj["psi"])
        if kind == "geometric" and "points" not in obj:
            return make_geometric_grid(obj["lo"], obj["hi"], obj["psi"])
        grid = cls(tuple(obj["points"]), kind=kind, psi=obj.get("psi"))
        for key in ("lo", "hi"):
            if key in obj and obj[key] is not None and float(obj[key]) != getattr(grid, key):
                raise InvalidDomainError(f"{key} does not match the first/last point")
        return grid

    @classmethod
    def from_json(cls, text: str) -> "EvaluationGrid":
        return cls.from_dict(json.loads(text))


def _with_endpoints(inner: List[float], lo: float, hi: float) -> List[float]:
    pts = [lo] + [p for p in inner if lo < p < hi] + [hi]
    out: List[float] = []
    for p in pts:
        if out and p <= out[-1]:
            continue
        out.append(p)
    return out


def make_uniform_grid(lo: float, hi: float, psi: float) -> EvaluationGrid:
    """Grid of the lattice ``psi * Z`` inside ``[lo, hi]``, bounds inserted."""
    lo, hi, psi = float(lo), float(hi), float(psi)
    if not psi > 0 or not math.isfinite(psi):
        raise InvalidParameterError(f"step must be positive, got {psi}")
    if not lo < hi:
        raise InvalidDomainError(f"need lo < hi, got [{lo}, {hi}]")
    z_lo = math.ceil(lo / psi - _SNAP)
    z_hi = math.floor(hi / psi + _SNAP)
    inner = [z * psi for z in range(z_lo, z_hi + 1)]
    # lattice points within rounding distance of a bound collapse onto it
    inner = [p for p in inner if abs(p - lo) > _SNAP * psi and abs(p - hi) > _SNAP * psi]
    return EvaluationGrid(tuple(_with_endpoints(inner, lo, hi)), kind="uniform", psi=psi)


def make_geometric_grid(lo: float, hi: float, psi: float) -> EvaluationGrid:
    """Grid of ``exp(psi * z)`` values inside ``[lo, hi]``, bounds inserted."""
    lo, hi, psi = float(lo), float(hi), float(psi)
    if not psi > 0 or not math.isfinite(psi):
        raise InvalidParameterError(f"ratio step must be positive, got {psi}")
    if not lo > 0:
        raise InvalidDomainError(f"geometric grids need lo > 0, got {lo}")
    if not lo < hi:
        raise InvalidDomainError(f"need lo < hi, got [{lo}, {hi}]")
    z_lo = math.ceil(math.log(lo) / psi - _SNAP)
    z_hi = math.floor(math.log(hi) / psi + _SNAP)
    inner = [math.exp(psi * z) for z in range(z_lo, z_hi + 1)]
    inner = [p for p in inner if abs(p - lo) > _SNAP * lo and abs(p - hi) > _SNAP * hi]
    return EvaluationGrid(tuple(_with_endpoints(inner, lo, hi)), kind="geometric", psi=psi)


def make_explicit_grid(points: Sequence[float]) -> EvaluationGrid:
    return EvaluationGrid(tuple(points), kind="explicit")


def path_indices(grid: EvaluationGrid | int, i: int) -> List[NodeIndex]:
    """Tree nodes ``(ceil(i / 2**l), l)`` for ``l = 0..L`` covering leaf ``i``.

    ``grid`` may also be the tree depth ``L`` itself.
    """
    if isinstance(grid, EvaluationGrid):
        depth, n = grid.tree_depth, grid.n_points
    else:
        depth = int(grid)
        n = 1 << depth
    if not 1 <= i <= n:
        raise IndexError(f"grid index {i} outside [1, {n}]")
    return [(ceil_div_pow2(i, l), l) for l in range(depth + 1)]


def all_tree_indices(depth: int) -> Iterator[NodeIndex]:
    """Every node of the depth-``depth`` tree, level by level (leaves first)."""
    for l in range(depth + 1):
        for j in range(1, (1 << (depth - l)) + 1):
            yield (j, l)


def node_interval(j: int, l: int, offset: int = 0) -> Tuple[int, int]:
    """Leaf range ``[offset + (j-1) 2**l + 1, offset + j 2**l]`` covered by a node."""
    return offset + (j - 1) * (1 << l) + 1, offset + j * (1 << l)
