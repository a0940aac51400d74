"""Distributed comparison functions over ``[0, 2**L)`` with outputs in Z_{2^64}.

Two keys ``k0, k1`` produced by :func:`dcf_gen` satisfy, for every ``x`` in the
domain::

    dcf_eval(0, k0, x) + dcf_eval(1, k1, x) == beta * [x <= alpha]   (mod 2**64)

The construction is the usual GGM seed tree: at every level the "losing"
branch of ``alpha``'s path gets a seed correction that makes both parties'
states equal (so later contributions cancel) and a value correction that
accumulates ``beta`` whenever the evaluation point branches left of ``alpha``.
A final correction adds ``beta`` at ``alpha`` itself, which turns the strict
comparison into ``<=``.

PRG: fixed-key AES-128 in Matyas-Meyer-Oseas mode.  For a 16-byte seed ``s``
the expansion is ``G(s)_i = AES_K(s ^ i) ^ s ^ i`` for ``i = 0..3`` (``i``
XORed into byte 0):

* block 0 -> left seed, block 1 -> right seed,
* block 2 -> left value (bytes 0-7, LE) and right value (bytes 8-15, LE),
* block 3 -> left control bit (lsb of byte 0), right control bit (lsb of byte 1).

Key layout (little-endian)::

    magic  b"DCF\\x00"            4 bytes
    version                       1 byte
    lambda (bits)                 2 bytes
    L                             1 byte
    root seed                    16 bytes
    L x { seed correction 16, control byte (bit0 left, bit1 right) 1,
          value correction 8 }   25 bytes each
    final correction              8 bytes

so a key is ``32 + 25 L`` bytes.  The party bit is not stored; it is the
server's own position and is passed to :func:`dcf_eval`.
"""

from __future__ import annotations

import secrets
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import DataError, InvalidParameterError, MalformedKeyError

LAMBDA = 128
MAGIC = b"DCF\x00"
VERSION = 1
_HEADER = struct.Struct("<4sBHB")
_FIXED_KEY = bytes.fromhex("5a4e0f3c8b1d7e29c6a3f0142d9b8e71")
MASK64 = (1 << 64) - 1


def key_length(depth: int) -> int:
    """Serialized key size in bytes for a domain of ``2**depth`` points."""
    return _HEADER.size + 16 + 25 * depth + 8


_encryptor_cache = None


def _aes_ecb(data: bytes) -> bytes:
    global _encryptor_cache
    if _encryptor_cache is None:
        _encryptor_cache = Cipher(algorithms.AES(_FIXED_KEY), modes.ECB())
    enc = _encryptor_cache.encryptor()
    return enc.update(data) + enc.finalize()


def prg(seeds: np.ndarray):
    """Expand a batch of seeds, shape ``(k, 16)`` uint8.

    Returns ``(s_left, s_right, v_left, v_right, t_left, t_right)`` with seeds
    as ``(k, 16)`` uint8, values as uint64 and control bits as uint8.
    """
    seeds = np.ascontiguousarray(seeds, dtype=np.uint8).reshape(-1, 16)
    k = seeds.shape[0]
    blocks = np.repeat(seeds[:, None, :], 4, axis=1)
    blocks[:, :, 0] ^= np.arange(4, dtype=np.uint8)
    flat = blocks.reshape(-1, 16)
    out = np.frombuffer(_aes_ecb(flat.tobytes()), dtype=np.uint8).reshape(k, 4, 16) ^ blocks
    values = out[:, 2, :].copy().view("<u8")
    return (
        out[:, 0, :],
        out[:, 1, :],
        values[:, 0].astype(np.uint64),
        values[:, 1].astype(np.uint64),
        out[:, 3, 0] & 1,
        out[:, 3, 1] & 1,
    )


def _convert(seeds: np.ndarray) -> np.ndarray:
    """Map seeds to group elements: first 8 bytes as a little-endian uint64."""
    seeds = np.ascontiguousarray(seeds, dtype=np.uint8).reshape(-1, 16)
    return seeds[:, :8].copy().view("<u8")[:, 0].astype(np.uint64)


@dataclass(frozen=True)
class DcfKey:
    depth: int
    seed: bytes
    cw_seed: np.ndarray  # (L, 16) uint8
    cw_t_left: np.ndarray  # (L,) uint8
    cw_t_right: np.ndarray  # (L,) uint8
    cw_value: np.ndarray  # (L,) uint64
    cw_final: int
    lam: int = LAMBDA

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, VERSION, self.lam, self.depth), self.seed]
        for i in range(self.depth):
            ctrl = int(self.cw_t_left[i]) | (int(self.cw_t_right[i]) << 1)
            parts.append(bytes(self.cw_seed[i]))
            parts.append(bytes([ctrl]))
            parts.append(struct.pack("<Q", int(self.cw_value[i])))
        parts.append(struct.pack("<Q", self.cw_final & MASK64))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DcfKey":
        if len(blob) < _HEADER.size:
            raise MalformedKeyError("key shorter than its header")
        magic, version, lam, depth = _HEADER.unpack_from(blob, 0)
        if magic != MAGIC or version != VERSION:
            raise MalformedKeyError("unknown key magic or version")
        if lam != LAMBDA:
            raise MalformedKeyError(f"unsupported seed length {lam}")
        if len(blob) != key_length(depth):
            raise MalformedKeyError(f"key for L={depth} must be {key_length(depth)} bytes, got {len(blob)}")
        pos = _HEADER.size
        seed = blob[pos:pos + 16]
        pos += 16
        cw_seed = np.zeros((depth, 16), dtype=np.uint8)
        t_l = np.zeros(depth, dtype=np.uint8)
        t_r = np.zeros(depth, dtype=np.uint8)
        v = np.zeros(depth, dtype=np.uint64)
        for i in range(depth):
            cw_seed[i] = np.frombuffer(blob[pos:pos + 16], dtype=np.uint8)
            ctrl = blob[pos + 16]
            if ctrl > 3:
                raise MalformedKeyError(f"bad control byte at level {i}")
            t_l[i], t_r[i] = ctrl & 1, ctrl >> 1
            (v[i],) = struct.unpack_from("<Q", blob, pos + 17)
            pos += 25
        (final,) = struct.unpack_from("<Q", blob, pos)
        return cls(depth, seed, cw_seed, t_l, t_r, v, final, lam)

    def __len__(self) -> int:
        return key_length(self.depth)


def _bits_msb_first(value: int, depth: int):
    return [(value >> (depth - 1 - i)) & 1 for i in range(depth)]


def dcf_gen(alpha: int, beta: int, depth: int, rng: Optional[np.random.Generator] = None):
    """Keys for ``x -> beta * [x <= alpha]`` on ``[0, 2**depth)``.

    Seeds come from ``rng`` when given (reproducible tests), otherwise from the
    OS entropy pool.
    """
    if depth < 1:
        raise InvalidParameterError("comparison keys need a domain of at least 1 bit")
    if not 0 <= alpha < 1 << depth:
        raise InvalidParameterError(f"threshold {alpha} outside [0, {1 << depth})")
    beta = int(beta) & MASK64

    def fresh():
        if rng is None:
            return np.frombuffer(secrets.token_bytes(16), dtype=np.uint8).copy()
        return rng.integers(0, 256, size=16, dtype=np.uint8)

    s = [fresh(), fresh()]
    roots = (bytes(s[0]), bytes(s[1]))
    t = [0, 1]
    v_alpha = 0
    cw_seed = np.zeros((depth, 16), dtype=np.uint8)
    cw_tl = np.zeros(depth, dtype=np.uint8)
    cw_tr = np.zeros(depth, dtype=np.uint8)
    cw_v = np.zeros(depth, dtype=np.uint64)

    for i, a in enumerate(_bits_msb_first(alpha, depth)):
        sl, sr, vl, vr, tl, tr = prg(np.stack(s))
        sign = -1 if t[1] else 1
        keep_s, lose_s = (sl, sr) if a == 0 else (sr, sl)
        keep_v, lose_v = (vl, vr) if a == 0 else (vr, vl)
        keep_t = tl if a == 0 else tr

        s_cw = lose_s[0] ^ lose_s[1]
        v_cw = sign * (int(lose_v[1]) - int(lose_v[0]) - v_alpha)
        if a == 1:
            # branching left of alpha means x < alpha: that subtree collects beta
            v_cw += sign * beta
        v_cw &= MASK64
        v_alpha = (v_alpha - int(keep_v[1]) + int(keep_v[0]) + sign * v_cw) & MASK64
        t_cw_l = int(tl[0]) ^ int(tl[1]) ^ a ^ 1
        t_cw_r = int(tr[0]) ^ int(tr[1]) ^ a
        t_cw_keep = t_cw_l if a == 0 else t_cw_r

        cw_seed[i], cw_tl[i], cw_tr[i], cw_v[i] = s_cw, t_cw_l, t_cw_r, v_cw
        for b in (0, 1):
            s[b] = keep_s[b] ^ (s_cw if t[b] else 0)
            t[b] = int(keep_t[b]) ^ (t[b] & t_cw_keep)

    conv = _convert(np.stack(s))
    sign = -1 if t[1] else 1
    final = (sign * (int(conv[1]) - int(conv[0]) - v_alpha + beta)) & MASK64
    keys = tuple(DcfKey(depth, roots[b], cw_seed, cw_tl, cw_tr, cw_v, final) for b in (0, 1))
    return keys


def dcf_eval_batch(party: int, keys: Sequence[DcfKey], xs: Sequence[int]) -> np.ndarray:
    """Shares of ``keys[k]`` at ``xs[k]`` for every ``k`` (one PRG call per level)."""
    if party not in (0, 1):
        raise InvalidParameterError("party bit must be 0 or 1")
    if len(keys) != len(xs):
        raise InvalidParameterError("one evaluation point per key")
    k = len(keys)
    if k == 0:
        return np.zeros(0, dtype=np.uint64)
    depth = keys[0].depth
    if any(key.depth != depth for key in keys):
        raise MalformedKeyError("batched keys must share the domain size")
    xs = np.asarray(xs, dtype=np.int64)
    if np.any((xs < 0) | (xs >= 1 << depth)):
        raise InvalidParameterError("evaluation point outside the key domain")

    s = np.stack([np.frombuffer(key.seed, dtype=np.uint8) for key in keys])
    t = np.full(k, party, dtype=np.uint8)
    acc = np.zeros(k, dtype=np.uint64)
    cws = np.stack([key.cw_seed for key in keys])
    cwl = np.stack([key.cw_t_left for key in keys])
    cwr = np.stack([key.cw_t_right for key in keys])
    cwv = np.stack([key.cw_value for key in keys])
    finals = np.array([key.cw_final for key in keys], dtype=np.uint64)

    for i in range(depth):
        sl, sr, vl, vr, tl, tr = prg(s)
        mask = t.astype(bool)
        sl = sl.copy()
        sr = sr.copy()
        sl[mask] ^= cws[mask, i]
        sr[mask] ^= cws[mask, i]
        tl = tl ^ (t & cwl[:, i])
        tr = tr ^ (t & cwr[:, i])
        go_right = ((xs >> (depth - 1 - i)) & 1).astype(bool)
        v = np.where(go_right, vr, vl) + t.astype(np.uint64) * cwv[:, i]
        acc = acc + v
        s = np.where(go_right[:, None], sr, sl)
        t = np.where(go_right, tr, tl).astype(np.uint8)

    acc = acc + _convert(s) + t.astype(np.uint64) * finals
    return acc if party == 0 else (np.uint64(0) - acc)


def dcf_eval(party: int, key: DcfKey, x: int) -> int:
    return int(dcf_eval_batch(party, [key], [x])[0])


def dcf_eval_all(party: int, key: DcfKey) -> np.ndarray:
    """Shares at every domain point ``0 .. 2**L - 1``."""
    n = 1 << key.depth
    return dcf_eval_batch(party, [key] * n, np.arange(n))


# -- two-server ECDF backend ----------------------------------------------------


def _aggregation():
    from . import aggregation

    return aggregation


class FssServer:
    """One server's key store; server 0 also publishes."""

    def __init__(self, bit: int):
        self.bit = bit
        self.keys: list = []

    def receive(self, blob: bytes) -> None:
        self.keys.append(DcfKey.from_bytes(blob))

    def partial_count(self, x: int) -> int:
        if not self.keys:
            return 0
        shares = dcf_eval_batch(self.bit, self.keys, [x] * len(self.keys))
        return int(np.sum(shares, dtype=np.uint64))


class FssBackend:
    """ECDF counts from comparison keys held by two non-colluding servers.

    Each party maps its value to the grid index ``k`` with
    ``tau_{k-1} < value <= tau_k`` and shares ``t -> 1[k <= t]``.  Keys are
    generated on the mirrored domain (``x -> D - 1 - x``) so the comparison
    keys' ``x <= alpha`` orientation yields ``t >= k``.

    ``clamp=True`` maps values above the grid to the last index (they are then
    counted at ``tau_N``); ``clamp=False`` rejects them.
    """

    name = "fss"
    publisher_role = "server"

    def __init__(self, parties, registry, grid, seed=None, clamp: bool = True, score=float):
        agg = _aggregation()
        self.parties = list(parties)
        self.registry = registry
        self.grid = grid
        self.router = agg.Router()
        self.depth = max(1, grid.tree_depth)
        self.servers = (FssServer(0), FssServer(1))
        rng = None if seed is None else np.random.default_rng([int(seed), 0x46535321])
        points = grid.as_array()
        for p in self.parties:
            for x in p.values:
                v = score(x)
                if v > grid.hi:
                    if not clamp:
                        raise DataError(f"value {v} above the grid's upper bound {grid.hi}")
                    v = grid.hi
                k0 = int(np.searchsorted(points, v, side="left"))
                alpha = (1 << self.depth) - 1 - k0
                for server, key in zip(self.servers, dcf_gen(alpha, 1, self.depth, rng)):
                    blob = key.to_bytes()
                    self.router.send("party", len(blob))
                    server.receive(blob)
        self.router.end_round()

    @property
    def n(self) -> int:
        return sum(len(p.values) for p in self.parties)

    def _grid_index(self, kernel) -> int:
        agg = _aggregation()
        if not isinstance(kernel, agg.ThresholdKernel):
            raise InvalidParameterError("the FSS backend only evaluates threshold kernels")
        i = self.grid.index_of_value(kernel.tau)
        if i > self.grid.n_points or self.grid.points[i - 1] != kernel.tau:
            raise InvalidParameterError(f"threshold {kernel.tau} is not a grid point")
        return i

    def u_stat_count(self, kernel, indices=()) -> float:
        agg = _aggregation()
        i = self._grid_index(kernel)
        indices = [tuple(ix) for ix in indices]
        for ix in indices:
            self.registry.spec_for(ix)
        if len(self.servers[0].keys) != len(self.servers[1].keys):
            raise DataError("servers hold different numbers of keys")
        x = (1 << self.depth) - 1 - (i - 1)
        self.router.send("aggregator", 8, count=2)
        self.router.end_round()
        y1 = self.servers[1].partial_count(x)
        self.router.send("server", agg.VALUE_BYTES)
        self.router.end_round()
        count = (self.servers[0].partial_count(x) + y1) % agg.MODULUS
        noise = self.registry.path_sum(indices)
        self.router.send(self.publisher_role, agg.VALUE_BYTES)
        self.router.end_round()
        return float(count) + noise

    def u_stat(self, kernel, indices=(), budget=None, tag="u_stat", sensitivity=1.0) -> float:
        agg = _aggregation()
        return agg.AggregationBackend.u_stat(self, kernel, indices, budget, tag, sensitivity)

    def cost_meter(self):
        return self.router.report()
