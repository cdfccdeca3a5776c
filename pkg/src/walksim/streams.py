"""Keyed deterministic random streams.

Every random draw in a simulation is a pure function of
(master seed, node id, round, draw index), so runs replay exactly and the
adversary observing honest randomness cannot perturb later draws. The
mixer is the splitmix64 finalizer, applied componentwise; it vectorizes
over numpy arrays, which the token engine relies on.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _mix(x):
    """splitmix64 finalizer; accepts uint64 scalar or array."""
    x = (x + _GOLDEN).astype(np.uint64) if isinstance(x, np.ndarray) else _U64(x + _GOLDEN)
    with np.errstate(over="ignore"):
        x = x ^ (x >> _U64(30))
        x = x * _MIX1
        x = x ^ (x >> _U64(27))
        x = x * _MIX2
        x = x ^ (x >> _U64(31))
    return x


def stream_key(master_seed: int, node: int, rnd: int) -> int:
    """64-bit key of the (node, round) stream under master_seed."""
    with np.errstate(over="ignore"):
        k = _mix(_U64(master_seed & 0xFFFFFFFFFFFFFFFF))
        k = _mix(k + _U64(node))
        k = _mix(k + _U64(rnd))
    return int(k)


def node_round_keys(master_seed: int, nodes: np.ndarray, rnd: int) -> np.ndarray:
    """Vectorized stream_key over an array of node ids."""
    with np.errstate(over="ignore"):
        k = _mix(_U64(master_seed & 0xFFFFFFFFFFFFFFFF))
        ks = _mix(np.full(nodes.shape, k, dtype=np.uint64) + nodes.astype(np.uint64))
        ks = _mix(ks + _U64(rnd))
    return ks


def uniforms(keys: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """U[0,1) draws: element i is draw number idx[i] of stream keys[i]."""
    with np.errstate(over="ignore"):
        bits = _mix(keys + idx.astype(np.uint64))
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def integers(keys: np.ndarray, idx: np.ndarray, bound: np.ndarray | int) -> np.ndarray:
    """Integer draws in [0, bound) (per-element bound allowed)."""
    u = uniforms(keys, idx)
    return (u * np.asarray(bound)).astype(np.int64)


class NodeStream:
    """Sequential draw interface for one (node, round) stream."""

    def __init__(self, master_seed: int, node: int, rnd: int):
        self._key = _U64(stream_key(master_seed, node, rnd))
        self._i = 0

    def _next_bits(self) -> int:
        with np.errstate(over="ignore"):
            b = _mix(self._key + _U64(self._i))
        self._i += 1
        return int(b)

    def uniform(self) -> float:
        return (self._next_bits() >> 11) * (1.0 / (1 << 53))

    def randint(self, bound: int) -> int:
        """Uniform integer in [0, bound)."""
        return int(self.uniform() * bound)

    def bit(self) -> int:
        return self._next_bits() & 1
