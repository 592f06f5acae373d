"""Counter-based random streams keyed by theta-paths.

Every node of the recursive sampling tree is addressed by a finite sequence of
signed integers (a theta-path).  A stream is a pure function of
``(master_seed, path)``: the path is hashed with SHA-256 over a prefix-free
encoding, the seed is folded into the digest with a bijective 64-bit mixer, and
draw ``c`` of the stream is ``mix64((key_a + (c + 1) * GAMMA) ^ key_b)``.
Nothing depends on the order in which streams are created, so siblings can be
derived in any order, in any thread, or in one vectorized batch.

Stream handles carry arrays of keys so that one handle can stand for many
independent streams at once (one per replication and per tree node); the
scalar handle is the 0-d special case.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtri

STREAM_VERSION = "sha256-splitmix64/1"

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_SEED_SALT = 0x6A09E667F3BCC908
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_TWO_M53 = 2.0**-53

_NODE_DOMAIN = b"mlfp/node\x00"
_ACTION_DOMAIN = b"mlfp/action\x00"

ROOT = (0,)


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, a bijection on uint64 arrays."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _S30)) * _MUL1
    z = (z ^ (z >> _S27)) * _MUL2
    return z ^ (z >> _S31)


def encode_entries(path: Iterable[int]) -> bytes:
    return b"".join(struct.pack("<q", int(e)) for e in path)


def encode_path(path: Sequence[int]) -> bytes:
    """Length-prefixed little-endian encoding; prefix-free and injective."""
    return struct.pack("<Q", len(path)) + encode_entries(path)


def _digest_words(digests: Sequence[bytes]) -> tuple[np.ndarray, np.ndarray]:
    words = np.frombuffer(b"".join(d[:16] for d in digests), dtype="<u8")
    words = words.reshape(-1, 2).astype(np.uint64)
    return words[:, 0], words[:, 1]


def node_digest(path: Sequence[int]) -> bytes:
    return hashlib.sha256(_NODE_DOMAIN + encode_path(path)).digest()


def action_digest(path: Sequence[int], action: int) -> bytes:
    return hashlib.sha256(
        _ACTION_DOMAIN + encode_path(path) + struct.pack("<q", int(action))
    ).digest()


def action_digests(entry_blobs: Sequence[bytes], action: int) -> list[bytes]:
    """Digests of many action sub-streams, paths given as raw entry bytes."""
    tail = struct.pack("<q", int(action))
    pre = _ACTION_DOMAIN
    sha = hashlib.sha256
    return [sha(pre + struct.pack("<Q", len(b) >> 3) + b + tail).digest() for b in entry_blobs]


def seed_mix(seeds) -> np.ndarray:
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    return mix64(seeds ^ np.uint64(_SEED_SALT))


def stream_keys(seedmix: np.ndarray, w0: np.ndarray, w1: np.ndarray):
    """Outer product of seed mixes (R,) and path digests (K,) -> keys (R, K)."""
    ka = mix64(seedmix[:, None] ^ w0[None, :])
    kb = mix64(ka ^ w1[None, :])
    return ka, kb


@dataclass
class StreamHandle:
    """One stream per entry of ``key_a``; the draw counter is shared.

    Handles are single-owner mutable state: drawing advances ``counter``.
    """

    key_a: np.ndarray
    key_b: np.ndarray
    counter: int = 0
    path: tuple | None = None
    seed: int | None = None

    @property
    def shape(self) -> tuple:
        return self.key_a.shape

    def _bits(self, size: int | None) -> np.ndarray:
        k = 1 if size is None else int(size)
        offs = np.array(
            [((self.counter + j + 1) * GAMMA) & MASK64 for j in range(k)], dtype=np.uint64
        )
        self.counter += k
        ka = np.atleast_1d(self.key_a)[..., None]
        kb = np.atleast_1d(self.key_b)[..., None]
        bits = mix64((ka + offs) ^ kb) >> _S11
        if size is None:
            return bits[..., 0].reshape(self.shape)
        return bits.reshape(self.shape + (k,))

    def uniform(self, size: int | None = None) -> np.ndarray:
        """Uniform variates in [0, 1), shape ``self.shape (+ (size,))``."""
        return self._bits(size).astype(np.float64) * _TWO_M53

    def normal(self, size: int | None = None) -> np.ndarray:
        # inverse CDF on the open interval (0, 1): one uniform per variate
        u = (self._bits(size).astype(np.float64) + 0.5) * _TWO_M53
        return ndtri(u)

    def sign(self, size: int | None = None) -> np.ndarray:
        return np.where(self.uniform(size) < 0.5, -1.0, 1.0)


def _handle(seed: int, digest: bytes, path: tuple) -> StreamHandle:
    w0, w1 = _digest_words([digest])
    ka, kb = stream_keys(seed_mix([seed]), w0, w1)
    return StreamHandle(ka.reshape(()), kb.reshape(()), 0, path, int(seed))


def stream_for(path: Sequence[int], master_seed: int) -> StreamHandle:
    path = tuple(int(e) for e in path)
    return _handle(master_seed, node_digest(path), path)


def root_stream(master_seed: int) -> StreamHandle:
    return stream_for(ROOT, master_seed)


def child_path(parent: Sequence[int], level_tag: int, index: int) -> tuple:
    if index < 1:
        raise ValueError(f"child index must be >= 1, got {index}")
    return tuple(parent) + (int(level_tag), int(index))


def derive_child(parent: Sequence[int], level_tag: int, index: int, master_seed: int) -> StreamHandle:
    """Stream of ``parent + (level_tag, index)``.

    Positive-family children use ``level_tag >= 0``, negative-family children
    ``level_tag <= -1``; the sign keeps the two families apart.
    """
    return stream_for(child_path(parent, level_tag, index), master_seed)


def action_stream(path: Sequence[int], action: int, master_seed: int) -> StreamHandle:
    """Per-action sub-stream of a node, domain-separated from node streams."""
    path = tuple(int(e) for e in path)
    return _handle(master_seed, action_digest(path, action), path)


def draw_uniform(stream: StreamHandle):
    u = stream.uniform()
    return float(u) if u.ndim == 0 else u


@dataclass
class CostLedger:
    """Exact count of random-field realizations (sampler calls).

    Python ints are unbounded, so the count cannot overflow.
    """

    sampler_calls: int = 0
    unit_cost: float = 1.0

    def add(self, calls: int) -> None:
        self.sampler_calls += int(calls)

    def merge(self, other: "CostLedger") -> "CostLedger":
        return CostLedger(self.sampler_calls + other.sampler_calls, self.unit_cost)

    @property
    def cost(self) -> float:
        return self.sampler_calls * self.unit_cost
