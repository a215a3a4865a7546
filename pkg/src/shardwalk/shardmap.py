"""Vertex-to-shard placement shared by all aligned stores of a training run.

The map is a pure function replicated at every trainer, so routing a row
never costs a metadata round-trip. Range and hash schemes are closed-form
over dense ids; the lookup scheme handles sparse id spaces with a sorted
key table (shards resolve local rows by binary search).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import split_sizes


@dataclass(frozen=True)
class ShardMap:
    N: int
    num_shards: int
    scheme: str = "range"
    lookup_keys: np.ndarray | None = field(default=None, repr=False)
    _bounds: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.N < 1 or self.num_shards < 1:
            raise ValueError("N and num_shards must be >= 1")
        if self.scheme not in ("range", "hash", "lookup"):
            raise ValueError(f"unknown shard scheme {self.scheme!r}")
        if self.scheme == "lookup":
            if self.lookup_keys is None or len(self.lookup_keys) != self.N:
                raise ValueError("lookup scheme needs exactly N keys")
            keys = np.sort(np.asarray(self.lookup_keys, dtype=np.int64))
            if len(np.unique(keys)) != self.N:
                raise ValueError("lookup keys must be distinct")
            object.__setattr__(self, "lookup_keys", keys)
        bounds = np.zeros(self.num_shards + 1, dtype=np.int64)
        np.cumsum(split_sizes(self.N, self.num_shards), out=bounds[1:])
        object.__setattr__(self, "_bounds", bounds)

    def _positions(self, ids: np.ndarray) -> np.ndarray:
        """Dense rank of each id (identity except under the lookup scheme)."""
        ids = np.asarray(ids, dtype=np.int64)
        if self.scheme != "lookup":
            if len(ids) and (ids.min() < 0 or ids.max() >= self.N):
                raise IndexError("vertex id out of range")
            return ids
        pos = np.searchsorted(self.lookup_keys, ids)
        ok = (pos < self.N) & (self.lookup_keys[np.minimum(pos, self.N - 1)] == ids)
        if not np.all(ok):
            raise KeyError(f"unknown vertex id {ids[~ok][0]}")
        return pos

    def shard_of(self, ids: np.ndarray) -> np.ndarray:
        pos = self._positions(ids)
        if self.scheme == "hash":
            return pos % self.num_shards
        return np.searchsorted(self._bounds, pos, side="right") - 1

    def local_of(self, ids: np.ndarray) -> np.ndarray:
        pos = self._positions(ids)
        if self.scheme == "hash":
            return pos // self.num_shards
        return pos - self._bounds[self.shard_of(ids)]

    def locate(self, vertex: int) -> tuple[int, int]:
        s = int(self.shard_of(np.array([vertex]))[0])
        return s, int(self.local_of(np.array([vertex]))[0])

    def rows_in(self, shard: int) -> int:
        if self.scheme == "hash":
            return int((self.N - shard + self.num_shards - 1) // self.num_shards)
        return int(self._bounds[shard + 1] - self._bounds[shard])

    def ids_of(self, shard: int) -> np.ndarray:
        """Global ids owned by a shard, in local-row order."""
        if self.scheme == "hash":
            return np.arange(shard, self.N, self.num_shards, dtype=np.int64)
        pos = np.arange(self._bounds[shard], self._bounds[shard + 1], dtype=np.int64)
        if self.scheme == "lookup":
            return self.lookup_keys[pos]
        return pos


def init_shard_rows(
    init: tuple, seed: int, shard_id: int, rows: int, d: int, dtype: np.dtype
) -> np.ndarray:
    """Materialize one shard's initial rows, deterministic per (seed, shard).

    The dense oracle replays the same call per shard, so a sharded store and
    its in-memory reference start from bit-identical values.
    """
    kind = init[0]
    if kind == "zeros":
        return np.zeros((rows, d), dtype=dtype)
    if kind == "constant":
        return np.full((rows, d), float(init[1]), dtype=dtype)
    if kind == "uniform":
        lo, hi = float(init[1]), float(init[2])
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(shard_id))))
        return rng.uniform(lo, hi, size=(rows, d)).astype(dtype)
    raise ValueError(f"unknown init kind {kind!r}")


def dense_initial_matrix(
    shard_map: ShardMap, init: tuple, seed: int, d: int, dtype: np.dtype
) -> np.ndarray:
    """Assemble the full N x d matrix exactly as the shards would initialize it."""
    out = np.empty((shard_map.N, d), dtype=dtype)
    for s in range(shard_map.num_shards):
        ids = shard_map.ids_of(s)
        block = init_shard_rows(init, seed, s, len(ids), d, dtype)
        if shard_map.scheme == "lookup":
            pos = np.searchsorted(shard_map.lookup_keys, ids)
            out[pos] = block
        else:
            out[ids] = block
    return out
