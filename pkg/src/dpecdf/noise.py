"""Tree-structured noise: the registry, the private ECDF and interval algebra.

Noise values live at *count* scale.  A curve value at frequency scale is
``(count_i + sum of path noise) / n``.

Every noise index ``(j, l)`` owns an independent PRNG substream seeded from
``(seed, _STREAM_TAG, zigzag(j), l)`` through :class:`numpy.random.SeedSequence`,
so a registry reproduces the same values whatever order indices are read in.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .budget import BudgetAccount
from .errors import (
    DataError,
    InvalidParameterError,
    SensitivityError,
    StreamExhaustedError,
    UnknownNoiseIndexError,
)
from .grid import EvaluationGrid, NodeIndex, ceil_div_pow2, path_indices, tree_depth_for

NOISELESS = math.inf
"""Epsilon sentinel: skip sampling entirely and charge nothing."""

_STREAM_TAG = 0x44504543

SignedNodes = Dict[NodeIndex, int]


def derive_seed(seed: int, *stream: int) -> int:
    """Independent 63-bit registry seed for a named sub-stream of ``seed``."""
    return int(np.random.SeedSequence([int(seed), *stream]).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def is_noiseless(epsilon: float) -> bool:
    return epsilon == NOISELESS


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if math.isnan(epsilon) or epsilon <= 0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")
    return epsilon


def laplace_from_uniform(u, scale):
    """Inverse CDF of Lap(scale) at ``u`` in (0, 1)."""
    u = np.asarray(u, dtype=float)
    out = np.where(u < 0.5, scale * np.log(2.0 * u), -scale * np.log(2.0 * (1.0 - u)))
    return out if out.ndim else float(out)


def sample_laplace(scale: float, rng: np.random.Generator, size=None):
    """Draw from the Laplace density ``exp(-|x|/b) / 2b`` by inverse-CDF sampling."""
    if not scale > 0:
        raise InvalidParameterError(f"Laplace scale must be positive, got {scale}")
    u = rng.random(size)
    # rng.random() lives in [0, 1); u == 0 maps to -inf
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return laplace_from_uniform(u, scale)


@dataclass(frozen=True)
class NoiseSpec:
    """Distribution of one noise term: Laplace with scale ``b`` or Gaussian with std ``sigma``."""

    kind: str
    scale: float

    def __post_init__(self):
        if self.kind not in ("laplace", "gaussian"):
            raise InvalidParameterError(f"unknown noise kind {self.kind!r}")
        if not self.scale >= 0 or not math.isfinite(self.scale):
            raise InvalidParameterError(f"noise scale must be finite and >= 0, got {self.scale}")

    @property
    def variance(self) -> float:
        return 2.0 * self.scale**2 if self.kind == "laplace" else self.scale**2

    @classmethod
    def laplace(cls, scale: float) -> "NoiseSpec":
        return cls("laplace", float(scale))

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseSpec":
        return cls("gaussian", float(sigma))

    @classmethod
    def zero(cls) -> "NoiseSpec":
        return cls("laplace", 0.0)


def _zigzag(j: int) -> int:
    return 2 * j if j >= 0 else -2 * j - 1


class TreeNoiseRegistry:
    """Secret store of drawn noise values, keyed by ``(j, l)``.

    Tree indices (``j >= 1``) use ``tree_spec``; when ``depth`` is given they
    are validated against the full index set of that tree.  Indices with
    ``j < 0`` must be registered with their own noise distribution first.
    """

    def __init__(self, seed: int, tree_spec: Optional[NoiseSpec] = None, depth: Optional[int] = None):
        if int(seed) < 0:
            raise InvalidParameterError("registry seed must be a non-negative integer")
        self.seed = int(seed)
        self.tree_spec = tree_spec
        self.depth = depth
        self._singletons: Dict[NodeIndex, NoiseSpec] = {}
        self._entries: Dict[NodeIndex, float] = {}
        self._lock = threading.Lock()

    @classmethod
    def for_ecdf(cls, seed: int, depth: int, epsilon: float) -> "TreeNoiseRegistry":
        """Registry whose tree terms are Lap((L + 1) / epsilon)."""
        epsilon = _check_epsilon(epsilon)
        scale = 0.0 if is_noiseless(epsilon) else (depth + 1) / epsilon
        return cls(seed, NoiseSpec.laplace(scale), depth)

    def register(self, index: NodeIndex, spec: NoiseSpec) -> None:
        j, _ = index
        if j >= 0:
            raise InvalidParameterError("only negative-j singleton indices can be registered")
        with self._lock:
            old = self._singletons.get(index)
            if old is not None and old != spec:
                raise InvalidParameterError(f"index {index} already registered with {old}")
            self._singletons[index] = spec

    def spec_for(self, index: NodeIndex) -> NoiseSpec:
        j, l = index
        if j < 0:
            try:
                return self._singletons[index]
            except KeyError:
                raise UnknownNoiseIndexError(f"no scale registered for singleton index {index}") from None
        if self.tree_spec is None:
            raise UnknownNoiseIndexError(f"registry has no tree scale for index {index}")
        if j == 0 or l < 0 or (self.depth is not None and (l > self.depth or j > 1 << (self.depth - l))):
            raise UnknownNoiseIndexError(f"{index} is not a node of the depth-{self.depth} tree")
        return self.tree_spec

    def _draw(self, index: NodeIndex, spec: NoiseSpec) -> float:
        if spec.scale == 0.0:
            return 0.0
        j, l = index
        rng = np.random.default_rng([self.seed, _STREAM_TAG, _zigzag(j), l])
        if spec.kind == "laplace":
            return float(sample_laplace(spec.scale, rng))
        return float(rng.normal(0.0, spec.scale))

    def get(self, j: int, l: int) -> float:
        """Draw-or-get: the first read draws, every later read returns the same value."""
        index = (int(j), int(l))
        value = self._entries.get(index)
        if value is not None:
            return value
        spec = self.spec_for(index)
        with self._lock:
            value = self._entries.get(index)
            if value is None:
                value = self._draw(index, spec)
                self._entries[index] = value
        return value

    def __getitem__(self, index: NodeIndex) -> float:
        return self.get(*index)

    def set_value(self, index: NodeIndex, value: float) -> None:
        """Pin a value before first use (tests and replay of audited snapshots)."""
        self.spec_for(index)
        with self._lock:
            if index in self._entries and self._entries[index] != value:
                raise InvalidParameterError(f"index {index} was already drawn")
            self._entries[index] = float(value)

    def level_values(self, level: int, count: int) -> np.ndarray:
        return np.array([self.get(j, level) for j in range(1, count + 1)], dtype=float)

    def path_sum(self, indices: Iterable[NodeIndex]) -> float:
        total = 0.0
        for j, l in indices:
            total += self.get(j, l)
        return total

    def __len__(self) -> int:
        return len(self._entries)

    def snapshot(self) -> dict:
        with self._lock:
            items = sorted(self._entries.items(), key=lambda kv: (kv[0][1], kv[0][0]))
        return {
            "seed": self.seed,
            "entries": [
                {"j": j, "l": l, "value": v, "scale": self.spec_for((j, l)).scale} for (j, l), v in items
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.snapshot())


@dataclass(frozen=True)
class PrivateEcdf:
    """Noisy curve values at frequency scale.  Not necessarily monotone or in [0, 1]."""

    grid: EvaluationGrid
    values: np.ndarray
    n: int
    epsilon: float
    indices: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        idx = self.indices or tuple(range(1, self.grid.n_points + 1))
        object.__setattr__(self, "indices", tuple(int(i) for i in idx))
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if len(values) != len(self.indices):
            raise InvalidParameterError("one value per grid index is required")

    def value_at_index(self, i: int) -> float:
        return float(self.values[self.indices.index(i)])

    def thresholds(self) -> np.ndarray:
        return np.array([self.grid.points[i - 1] for i in self.indices])


def ecdf_counts(scores: Sequence[float], grid: EvaluationGrid) -> np.ndarray:
    """``#{x : x <= tau_i}`` for every grid point."""
    s = np.sort(np.asarray(scores, dtype=float))
    return np.searchsorted(s, grid.as_array(), side="right").astype(np.int64)


def tree_noise_for_indices(registry: TreeNoiseRegistry, depth: int, indices: Sequence[int]) -> np.ndarray:
    """Count-scale noise ``sum_l eta_{ceil(i/2^l), l}`` for each grid index ``i``."""
    idx = np.asarray(indices, dtype=np.int64)
    acc = np.zeros(len(idx), dtype=float)
    if len(idx) == 0:
        return acc
    for l in range(depth + 1):
        parents = -((-idx) >> l)
        top = int(parents.max())
        level = registry.level_values(l, top)
        acc += level[parents - 1]
    return acc


def _check_tree_scale(registry: TreeNoiseRegistry, depth: int, epsilon: float) -> None:
    spec = registry.tree_spec
    expected = 0.0 if is_noiseless(epsilon) else (depth + 1) / epsilon
    if spec is None or spec.kind != "laplace" or not math.isclose(spec.scale, expected, rel_tol=1e-12, abs_tol=0.0):
        raise InvalidParameterError(
            f"registry tree scale {spec} does not match Lap((L+1)/eps) = {expected} for L={depth}, eps={epsilon}"
        )


def dp_ecdf(
    scores: Sequence[float],
    grid: EvaluationGrid,
    epsilon: float,
    registry: TreeNoiseRegistry,
    budget: Optional[BudgetAccount] = None,
    tag: str = "ecdf",
) -> PrivateEcdf:
    """Publish the whole curve with one tree mechanism; charges ``epsilon`` once."""
    epsilon = _check_epsilon(epsilon)
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise DataError("cannot publish the ECDF of an empty dataset")
    depth = grid.tree_depth
    _check_tree_scale(registry, depth, epsilon)
    n = int(scores.size)
    counts = ecdf_counts(scores, grid)
    noise = tree_noise_for_indices(registry, depth, range(1, grid.n_points + 1))
    values = (counts + noise) / n
    if budget is not None:
        budget.charge(tag, 0 if is_noiseless(epsilon) else epsilon)
    return PrivateEcdf(grid, values, n, epsilon)


def noiseless_ecdf(scores: Sequence[float], grid: EvaluationGrid) -> PrivateEcdf:
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise DataError("cannot compute the ECDF of an empty dataset")
    return PrivateEcdf(grid, ecdf_counts(scores, grid) / scores.size, int(scores.size), NOISELESS)


def expected_squared_error(depth: int, epsilon: float, n: Optional[int] = None) -> float:
    """``2 (L+1)^3 / eps^2`` at count scale, or divided by ``n^2`` at frequency scale."""
    value = 2.0 * (depth + 1) ** 3 / epsilon**2
    return value if n is None else value / n**2


# -- interval decomposition -------------------------------------------------


def _add(out: SignedNodes, node: NodeIndex, sign: int) -> None:
    out[node] = out.get(node, 0) + sign


def _node(out: SignedNodes, off: int, j: int, l: int, sign: int) -> None:
    _add(out, ((off >> l) + j, l), sign)


def _prefix(depth: int, r: int, off: int, out: SignedNodes, sign: int) -> None:
    # indicator of [off+1, off+r] inside the block of 2**depth leaves after off
    if depth == 0:
        _node(out, off, 1, 0, sign)
        return
    if depth == 1:
        if r == 1:
            _node(out, off, 1, 0, sign)
        else:
            _node(out, off, 1, 1, sign)
        return
    q = 1 << (depth - 2)
    k = (r - 1) // q
    if k == 0:
        _prefix(depth - 2, r, off, out, sign)
    elif k == 1:
        _node(out, off, 1, depth - 2, sign)
        _prefix(depth - 2, r - q, off + q, out, sign)
    elif k == 2:
        _node(out, off, 1, depth - 1, sign)
        _prefix(depth - 2, r - 2 * q, off + 2 * q, out, sign)
    else:
        _node(out, off, 1, depth, sign)
        if r < 4 * q:
            _suffix(depth - 2, r + 1 - 3 * q, off + 3 * q, out, -sign)


def _suffix(depth: int, r: int, off: int, out: SignedNodes, sign: int) -> None:
    # indicator of [off+r, off+2**depth]
    if depth == 0:
        _node(out, off, 1, 0, sign)
        return
    if depth == 1:
        if r == 1:
            _node(out, off, 1, 1, sign)
        else:
            _node(out, off, 2, 0, sign)
        return
    q = 1 << (depth - 2)
    k = (r - 1) // q
    if k == 0:
        _node(out, off, 1, depth, sign)
        if r > 1:
            _prefix(depth - 2, r - 1, off, out, -sign)
    elif k == 1:
        _suffix(depth - 2, r - q, off + q, out, sign)
        _node(out, off, 2, depth - 1, sign)
    elif k == 2:
        _suffix(depth - 2, r - 2 * q, off + 2 * q, out, sign)
        _node(out, off, 4, depth - 2, sign)
    else:
        _suffix(depth - 2, r - 3 * q, off + 3 * q, out, sign)


def _clean(out: SignedNodes) -> SignedNodes:
    return {k: v for k, v in sorted(out.items(), key=lambda kv: (-kv[0][1], kv[0][0])) if v != 0}


def decompose_interval(depth: int, d: int, b: int, side: str) -> SignedNodes:
    """Signed combination of the nodes of a depth-``depth`` block starting after ``d``.

    ``side="prefix"`` reconstructs the indicator of ``[d+1, b]``;
    ``side="suffix"`` reconstructs ``[b, d + 2**depth]``.  Node ``(j, l)`` of the
    returned mapping is the block-local node covering
    ``[d + (j-1) 2**l + 1, d + j 2**l]``.  At most ``ceil((depth+1)/2)`` entries.
    """
    if depth < 0:
        raise InvalidParameterError("depth must be >= 0")
    r = b - d
    if not 1 <= r <= 1 << depth:
        raise InvalidParameterError(f"b - d = {r} outside [1, {1 << depth}]")
    out: SignedNodes = {}
    if side == "prefix":
        _prefix(depth, r, 0, out, 1)
    elif side == "suffix":
        _suffix(depth, r, 0, out, 1)
    else:
        raise InvalidParameterError(f"side must be 'prefix' or 'suffix', got {side!r}")
    return _clean(out)


def _shift(nodes: SignedNodes, offset: int) -> SignedNodes:
    return {((offset >> l) + j, l): s for (j, l), s in nodes.items()}


def adjacent_shift_vector(depth: int, t1: int, t2: int) -> SignedNodes:
    """Signed tree nodes reconstructing the indicator of ``[t1+1, t2]`` with at most ``depth+1`` terms.

    This is the noise shift that explains the difference between the curves of
    two adjacent datasets, so the Laplace terms it touches bound the privacy loss.
    """
    if not 0 <= t1 < t2 <= 1 << depth:
        raise InvalidParameterError(f"need 0 <= t1 < t2 <= {1 << depth}, got ({t1}, {t2})")
    width = t2 - t1
    if width & (width - 1) == 0 and t1 % width == 0:
        l = width.bit_length() - 1
        return {(t2 >> l, l): 1}
    for lm in range(depth, -1, -1):
        step = 1 << lm
        j = max(1, ceil_div_pow2(t1, lm))
        if j * step < t2:
            break
    d2 = j * step
    d1 = d2 - step
    out: SignedNodes = {}
    if t1 < d2:
        for node, s in _shift(decompose_interval(lm, 0, t1 + 1 - d1, "suffix"), d1).items():
            _add(out, node, s)
    for node, s in _shift(decompose_interval(lm, 0, t2 - d2, "prefix"), d2).items():
        _add(out, node, s)
    return _clean(out)


# -- continual observation ----------------------------------------------------


class ContinualReleaseState:
    """Running prefix sums of a stream of length ``horizon`` released under DP.

    Each element must lie in ``[0, 1]``.  Noise terms follow the path of the
    current time step through a tree of depth ``ceil(log2 horizon)``, with the
    per-term magnitude cut to ``ceil((L+1)/2)`` units.
    """

    def __init__(
        self,
        horizon: int,
        seed: int,
        epsilon: Optional[float] = None,
        z: Optional[float] = None,
        budget: Optional[BudgetAccount] = None,
    ):
        if horizon < 1:
            raise InvalidParameterError("horizon must be >= 1")
        if (epsilon is None) == (z is None):
            raise InvalidParameterError("give exactly one of epsilon (Laplace) or z (Gaussian)")
        self.horizon = int(horizon)
        self.tree_depth = tree_depth_for(self.horizon)
        self.terms = math.ceil((self.tree_depth + 1) / 2)
        if epsilon is not None:
            epsilon = _check_epsilon(epsilon)
            self.noise_kind = "laplace"
            self.epsilon, self.z = epsilon, None
            spec = NoiseSpec.laplace(0.0 if is_noiseless(epsilon) else self.terms / epsilon)
        else:
            if not z > 0:
                raise InvalidParameterError("z must be positive")
            self.noise_kind = "gaussian"
            self.epsilon, self.z = None, float(z)
            spec = NoiseSpec.gaussian(math.sqrt(self.terms) * self.z)
        self.registry = TreeNoiseRegistry(seed, spec, self.tree_depth)
        self.t = 0
        self._sum = 0.0
        if budget is not None and self.noise_kind == "laplace":
            budget.charge("continual", 0 if is_noiseless(self.epsilon) else self.epsilon)

    @property
    def scale(self) -> float:
        return self.registry.tree_spec.scale

    @property
    def term_variance(self) -> float:
        return self.registry.tree_spec.variance

    @property
    def zcdp_rho(self) -> Optional[Fraction]:
        if self.z is None:
            return None
        return Fraction(1) / (2 * Fraction(self.z) ** 2)

    def privacy_label(self) -> str:
        if self.noise_kind == "gaussian":
            return f"{self.zcdp_rho}-zCDP"
        return f"{self.epsilon:g}-DP"

    def release(self, x: float) -> float:
        if self.t >= self.horizon:
            raise StreamExhaustedError(f"stream horizon {self.horizon} already reached")
        x = float(x)
        if not 0.0 <= x <= 1.0:
            raise SensitivityError(f"stream element {x} outside [0, 1]")
        self.t += 1
        self._sum += x
        return self._sum + self.registry.path_sum(path_indices(self.tree_depth, self.t))


def continual_release(state: ContinualReleaseState, x: float) -> float:
    return state.release(x)
