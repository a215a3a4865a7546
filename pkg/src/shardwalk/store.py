"""Client-side view of sharded matrix stores.

A `MatrixStore` is pure metadata: the rows live in the storage actors.
`StoreClient` turns store operations into frames, fanning a request over
the touched shards only and reassembling replies in input-id order.
Contract violations (duplicate or out-of-range ids, misaligned stores)
are rejected before anything is dispatched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import frames as fr
from .runtime import RpcClient
from .shardmap import ShardMap

SCHEME_CODES = {"range": 0, "hash": 1, "lookup": 2}
INIT_CODES = {"zeros": 0, "uniform": 1, "constant": 2}


@dataclass(frozen=True)
class RowBlock:
    """Ordered vertex ids with one row each; ids must not repeat."""

    ids: np.ndarray
    rows: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        object.__setattr__(self, "ids", ids)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("RowBlock ids contain duplicates")
        if self.rows.shape[0] != len(ids):
            raise ValueError("RowBlock rows/ids length mismatch")


@dataclass(frozen=True)
class MatrixStore:
    name: str
    N: int
    d: int
    dtype: np.dtype
    shard_map: ShardMap
    init: tuple = ("zeros",)
    seed: int = 0

    def aligned_with(self, other: "MatrixStore") -> bool:
        a, b = self.shard_map, other.shard_map
        return (
            a.N == b.N
            and a.num_shards == b.num_shards
            and a.scheme == b.scheme
            and self.d == other.d
        )


def normalize_init(init) -> tuple:
    if init == "zeros" or init == ("zeros",):
        return ("zeros",)
    if isinstance(init, tuple) and init[0] in ("uniform", "constant"):
        return init
    raise ValueError(f"unknown init {init!r}")


class StoreClient:
    """One trainer's (or the driver's) handle on the storage layer."""

    def __init__(self, rpc: RpcClient, trainer_id: int = 0, participants: int = 1):
        self.rpc = rpc
        self.trainer_id = trainer_id
        self.participants = participants

    # -- lifecycle ----------------------------------------------------------

    def create(
        self,
        name: str,
        N: int,
        d: int,
        num_shards: int,
        init="zeros",
        seed: int = 0,
        scheme: str = "range",
        dtype=np.float32,
        lookup_keys: np.ndarray | None = None,
    ) -> MatrixStore:
        if N < 1 or d < 1 or num_shards < 1:
            raise ValueError("N, d and num_shards must be >= 1")
        if num_shards > N:
            raise ValueError(f"num_shards {num_shards} exceeds row count {N}")
        init = normalize_init(init)
        dtype = np.dtype(dtype)
        shard_map = ShardMap(N=N, num_shards=num_shards, scheme=scheme, lookup_keys=lookup_keys)
        a, b = 0.0, 0.0
        if init[0] == "uniform":
            a, b = float(init[1]), float(init[2])
        elif init[0] == "constant":
            a = float(init[1])
        head = (
            fr.pack_text(name)
            + struct.pack(
                "<QIBBIB",
                N,
                d,
                fr.DTYPE_CODES[dtype],
                SCHEME_CODES[scheme],
                num_shards,
                INIT_CODES[init[0]],
            )
            + struct.pack("<ddQ", a, b, seed)
        )
        slots = []
        for s in range(num_shards):
            payload = head
            if scheme == "lookup":
                payload = head + fr.pack_ids(shard_map.ids_of(s))
            slots.append(self.rpc.call_async(f"shard/{s}", fr.OP_CREATE, payload))
        self.rpc.gather(slots)
        return MatrixStore(
            name=name, N=N, d=d, dtype=dtype, shard_map=shard_map, init=init, seed=seed
        )

    # -- data movement -------------------------------------------------------

    def get(self, store: MatrixStore, ids: np.ndarray) -> np.ndarray:
        """Rows for deduplicated ids, one request per touched shard."""
        ids = self._check_ids(store, ids)
        out = np.empty((len(ids), store.d), dtype=store.dtype)
        groups = self._group_by_shard(store, ids)
        slots = [
            (idx, self.rpc.call_async(
                f"shard/{s}", fr.OP_GET, fr.pack_text(store.name) + fr.pack_ids(ids[idx])
            ))
            for s, idx in groups
        ]
        for idx, slot in slots:
            payload = self.rpc.wait(slot)
            out[idx] = fr.Reader(payload).rows(len(idx), store.d, store.dtype)
        return out

    def put(self, store: MatrixStore, ids: np.ndarray, rows: np.ndarray) -> None:
        self._write(store, ids, rows, fr.OP_PUT)

    def add(self, store: MatrixStore, ids: np.ndarray, rows: np.ndarray) -> None:
        self._write(store, ids, rows, fr.OP_ADD)

    def put_block(self, store: MatrixStore, block: RowBlock) -> None:
        self.put(store, block.ids, block.rows)

    def add_block(self, store: MatrixStore, block: RowBlock) -> None:
        self.add(store, block.ids, block.rows)

    def _write(self, store: MatrixStore, ids: np.ndarray, rows: np.ndarray, opcode: int) -> None:
        ids = self._check_ids(store, ids)
        rows = np.asarray(rows)
        if rows.shape != (len(ids), store.d):
            raise ValueError(f"rows shape {rows.shape} != ({len(ids)}, {store.d})")
        slots = []
        for s, idx in self._group_by_shard(store, ids):
            payload = (
                fr.pack_text(store.name)
                + fr.pack_ids(ids[idx])
                + fr.pack_rows(rows[idx], store.dtype)
            )
            slots.append(self.rpc.call_async(f"shard/{s}", opcode, payload))
        self.rpc.gather(slots)

    # -- in-store arithmetic ---------------------------------------------------

    def mult(self, store: MatrixStore, scalar: float) -> None:
        """Scale every row in place; control frames only, no row traffic."""
        payload = fr.pack_text(store.name) + struct.pack("<d", scalar)
        self.rpc.gather(
            [
                self.rpc.call_async(f"shard/{s}", fr.OP_MULT, payload)
                for s in range(store.shard_map.num_shards)
            ]
        )

    def mult_add(self, target: MatrixStore, source: MatrixStore, scalar: float) -> None:
        """target += scalar * source, computed shard-locally."""
        if not target.aligned_with(source):
            raise ValueError("mult_add requires aligned co-sharded stores")
        payload = fr.pack_text(target.name) + fr.pack_text(source.name) + struct.pack("<d", scalar)
        self.rpc.gather(
            [
                self.rpc.call_async(f"shard/{s}", fr.OP_MULTADD, payload)
                for s in range(target.shard_map.num_shards)
            ]
        )

    # -- synchronization ---------------------------------------------------------

    def barrier(self, iteration: int) -> None:
        """Block until all participants arrive and all shards drained writes."""
        payload = bytes([fr.BARRIER_ARRIVE]) + struct.pack(
            "<QII", iteration, self.trainer_id, self.participants
        )
        self.rpc.call("coordinator", fr.OP_BARRIER, payload)

    def allreduce(self, round_idx: int, matrix: np.ndarray) -> np.ndarray:
        """Gather-to-coordinator mean over all participants' matrices."""
        matrix = np.ascontiguousarray(matrix)
        n, d = matrix.shape
        payload = (
            struct.pack("<QII", round_idx, self.trainer_id, self.participants)
            + struct.pack("<QIB", n, d, fr.DTYPE_CODES[np.dtype(matrix.dtype)])
            + fr.pack_rows(matrix, matrix.dtype)
        )
        resp = self.rpc.call("coordinator", fr.OP_ADD, payload)
        return fr.Reader(resp).rows(n, d, matrix.dtype)

    # -- helpers ---------------------------------------------------------------

    @staticmethod
    def _check_ids(store: MatrixStore, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            raise ValueError("empty id list")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("ids contain duplicates")
        if store.shard_map.scheme != "lookup" and (ids.min() < 0 or ids.max() >= store.N):
            raise ValueError("id out of range")
        return ids

    @staticmethod
    def _group_by_shard(store: MatrixStore, ids: np.ndarray):
        shards = store.shard_map.shard_of(ids)
        for s in np.unique(shards):
            yield int(s), np.nonzero(shards == s)[0]
