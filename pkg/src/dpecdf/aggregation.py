"""Private order-1 U-statistics through pluggable aggregation backends.

A backend publishes ``(sum_i phi(x_i) + sum_{k in I} eta_k) / n``: the kernel
sum over all parties' instances plus registry noise at count scale, divided
by ``n``.  Noise is added by the publisher after the aggregate is known, so
every backend sharing a registry publishes the same number.

Backends are in-process simulations.  Messages go through a :class:`Router`
that counts them per sender role; nothing touches the network.

Message accounting per query (``n`` parties, ``m`` servers):

* ``plaintext``: ``n`` party -> curator values, 1 publication.
* ``addshare:m=k``: ``n m`` party -> server shares, ``m`` server -> aggregator
  partial sums, 1 publication.
* ``fss:m=2``: set-up sends ``2n`` keys once; each query is 2 aggregator ->
  server requests, 1 server -> server partial sum and 1 publication.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .budget import BudgetAccount
from .errors import ConfigError, DataError, InvalidParameterError
from .grid import EvaluationGrid, NodeIndex, path_indices
from .noise import PrivateEcdf, TreeNoiseRegistry, _check_tree_scale, _check_epsilon, is_noiseless

FRACTION_BITS = 20
MODULUS = 1 << 64
ROLES = ("party", "server", "aggregator")
VALUE_BYTES = 8


# -- kernels -------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdKernel:
    """``x -> 1[score(x) <= tau]``; the only kernel class the FSS backend accepts."""

    tau: float

    def __call__(self, x) -> float:
        return 1.0 if float(x) <= self.tau else 0.0


def constant_kernel(value: float = 1.0) -> Callable[[Any], float]:
    return lambda x: value


# -- cost accounting -----------------------------------------------------------


@dataclass
class CostReport:
    messages_sent: int = 0
    bytes_sent: int = 0
    rounds: int = 0
    by_role: Dict[str, Dict[str, int]] = field(
        default_factory=lambda: {r: {"messages": 0, "bytes": 0} for r in ROLES}
    )

    def messages_from(self, role: str) -> int:
        return self.by_role[role]["messages"]

    def to_dict(self) -> dict:
        return {
            "messages_sent": self.messages_sent,
            "bytes_sent": self.bytes_sent,
            "rounds": self.rounds,
            "by_role": {r: dict(v) for r, v in self.by_role.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class Router:
    """Sequential message delivery with a running cost meter."""

    def __init__(self):
        self._report = CostReport()
        self._lock = threading.Lock()

    def send(self, role: str, n_bytes: int, count: int = 1) -> None:
        if role not in ROLES:
            raise InvalidParameterError(f"unknown role {role!r}")
        with self._lock:
            self._report.messages_sent += count
            self._report.bytes_sent += count * n_bytes
            self._report.by_role[role]["messages"] += count
            self._report.by_role[role]["bytes"] += count * n_bytes

    def end_round(self, count: int = 1) -> None:
        with self._lock:
            self._report.rounds += count

    def report(self) -> CostReport:
        with self._lock:
            r = self._report
            return CostReport(r.messages_sent, r.bytes_sent, r.rounds, {k: dict(v) for k, v in r.by_role.items()})


# -- fixed point sharing ------------------------------------------------------


def encode_fixed(value: float) -> int:
    """Two's-complement fixed point with ``FRACTION_BITS`` fractional bits, mod 2^64."""
    return int(round(float(value) * (1 << FRACTION_BITS))) % MODULUS


def decode_fixed(word: int) -> float:
    word %= MODULUS
    if word >= MODULUS // 2:
        word -= MODULUS
    return word / (1 << FRACTION_BITS)


def additive_share(value: int, m: int, rng: np.random.Generator) -> List[int]:
    """``m`` shares summing to ``value`` mod 2^64; any ``m - 1`` of them are uniform."""
    if m < 2:
        raise InvalidParameterError(f"need at least 2 servers, got {m}")
    shares = [int(w) for w in rng.integers(0, MODULUS, size=m - 1, dtype=np.uint64)]
    shares.append((int(value) - sum(shares)) % MODULUS)
    return shares


def reconstruct_shares(shares: Iterable[int]) -> int:
    return sum(int(s) for s in shares) % MODULUS


# -- backends ------------------------------------------------------------------


@dataclass(frozen=True)
class Party:
    id: int
    values: Tuple[Any, ...]


def parties_from_instances(instances: Sequence[Any]) -> List[Party]:
    """One party per instance."""
    return [Party(i, (x,)) for i, x in enumerate(instances)]


class AggregationBackend:
    """Contract: ``u_stat`` publishes a noisy kernel average; ``cost_meter`` reports traffic."""

    name = "abstract"
    publisher_role = "aggregator"

    def __init__(self, parties: Sequence[Party], registry: TreeNoiseRegistry):
        self.parties = list(parties)
        self.registry = registry
        self.router = Router()

    @property
    def n(self) -> int:
        return sum(len(p.values) for p in self.parties)

    def _kernel_sum(self, kernel) -> float:
        raise NotImplementedError

    def _publish(self, total: float, indices: Sequence[NodeIndex]) -> float:
        # noise summed in index order, matching the vectorised curve path
        noise = self.registry.path_sum(indices)
        self.router.send(self.publisher_role, VALUE_BYTES)
        self.router.end_round()
        return total + noise

    def u_stat_count(self, kernel, indices: Sequence[NodeIndex] = ()) -> float:
        """``sum phi(x) + sum eta`` at count scale."""
        indices = [tuple(ix) for ix in indices]
        for ix in indices:
            self.registry.spec_for(ix)
        return self._publish(self._kernel_sum(kernel), indices)

    def u_stat(
        self,
        kernel,
        indices: Sequence[NodeIndex] = (),
        budget: Optional[BudgetAccount] = None,
        tag: str = "u_stat",
        sensitivity: float = 1.0,
    ) -> float:
        """Publish ``(sum phi(x) + sum eta) / n``.

        With ``budget`` given, charges ``sensitivity / scale`` for each
        singleton (negative ``j``) Laplace index; tree indices are accounted
        by whoever publishes the whole curve.
        """
        n = self.n
        if n == 0:
            raise DataError("no instances to average over")
        value = self.u_stat_count(kernel, indices) / n
        if budget is not None:
            for ix in indices:
                spec = self.registry.spec_for(tuple(ix))
                if ix[0] < 0 and spec.kind == "laplace" and spec.scale > 0:
                    budget.charge(f"{tag}{tuple(ix)}", sensitivity / spec.scale)
        return value

    def cost_meter(self) -> CostReport:
        return self.router.report()


class PlaintextBackend(AggregationBackend):
    """Trusted curator: parties send raw kernel values."""

    name = "plaintext"

    def _kernel_sum(self, kernel) -> float:
        total = 0.0
        for p in self.parties:
            local = 0.0
            for x in p.values:
                local += float(kernel(x))
            self.router.send("party", VALUE_BYTES)
            total += local
        self.router.end_round()
        return total


class AdditiveSharingBackend(AggregationBackend):
    """Honest-but-curious servers see only uniformly random shares."""

    name = "addshare"

    def __init__(self, parties: Sequence[Party], registry: TreeNoiseRegistry, m: int = 2, seed: int = 0):
        if m < 2:
            raise ConfigError(f"additive sharing needs m >= 2 servers, got {m}")
        super().__init__(parties, registry)
        self.m = m
        self._rng = np.random.default_rng([int(seed), 0x53484152])
        self.transcripts: List[List[int]] = [[] for _ in range(m)]
        self.record_transcripts = False

    def _kernel_sum(self, kernel) -> float:
        server_acc = [0] * self.m
        for p in self.parties:
            local = sum(encode_fixed(kernel(x)) for x in p.values) % MODULUS
            shares = additive_share(local, self.m, self._rng)
            for k, s in enumerate(shares):
                server_acc[k] = (server_acc[k] + s) % MODULUS
                if self.record_transcripts:
                    self.transcripts[k].append(s)
            self.router.send("party", VALUE_BYTES, count=self.m)
        self.router.end_round()
        self.router.send("server", VALUE_BYTES, count=self.m)
        self.router.end_round()
        return decode_fixed(reconstruct_shares(server_acc))


def parse_backend_spec(spec: str) -> Tuple[str, int]:
    """``"plaintext"`` | ``"addshare:m=<k>"`` | ``"fss:m=2"`` -> (kind, m)."""
    spec = spec.strip()
    if spec == "plaintext":
        return "plaintext", 1
    m = re.fullmatch(r"(addshare|fss)(?::m=(\d+))?", spec)
    if not m:
        raise ConfigError(f"unknown backend {spec!r}")
    kind, count = m.group(1), int(m.group(2) or 2)
    if kind == "addshare" and count < 2:
        raise ConfigError("addshare needs m >= 2")
    if kind == "fss" and count != 2:
        raise ConfigError("the FSS backend supports exactly m=2 servers")
    return kind, count


def make_backend(
    spec: str,
    instances: Sequence[Any],
    registry: TreeNoiseRegistry,
    grid: Optional[EvaluationGrid] = None,
    seed: int = 0,
    **kwargs,
) -> AggregationBackend:
    kind, m = parse_backend_spec(spec)
    parties = parties_from_instances(instances)
    if kind == "plaintext":
        return PlaintextBackend(parties, registry)
    if kind == "addshare":
        return AdditiveSharingBackend(parties, registry, m=m, seed=seed)
    if grid is None:
        raise ConfigError("the FSS backend needs the evaluation grid at set-up")
    from .fss import FssBackend

    return FssBackend(parties, registry, grid, seed=seed, **kwargs)


def u_stat_order1(backend: AggregationBackend, kernel, indices: Sequence[NodeIndex] = (), **kwargs) -> float:
    return backend.u_stat(kernel, indices, **kwargs)


def evaluate_curve_pointwise(
    backend: AggregationBackend,
    grid: EvaluationGrid,
    B: Optional[Sequence[int]],
    epsilon: float,
    budget: Optional[BudgetAccount] = None,
    tag: str = "ecdf",
) -> PrivateEcdf:
    """One ``u_stat`` per index in ``B`` with the path noise of that index.

    Returns the same numbers as :func:`dpecdf.noise.dp_ecdf` restricted to
    ``B`` when both use the same registry.
    """
    epsilon = _check_epsilon(epsilon)
    _check_tree_scale(backend.registry, grid.tree_depth, epsilon)
    B = tuple(range(1, grid.n_points + 1)) if B is None else tuple(int(i) for i in B)
    if not B:
        raise InvalidParameterError("evaluation set must be non-empty")
    n = backend.n
    if n == 0:
        raise DataError("cannot publish the ECDF of an empty dataset")
    values = [backend.u_stat(ThresholdKernel(grid.tau(i)), path_indices(grid, i)) for i in B]
    if budget is not None:
        budget.charge(tag, 0 if is_noiseless(epsilon) else epsilon)
    return PrivateEcdf(grid, np.array(values), n, epsilon, B)
