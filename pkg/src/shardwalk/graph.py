"""Immutable CSR graph, edge-list ingestion, and node partitioning.

The graph is replicated at every trainer and never mutated after
construction, so all readers may share one instance without locking.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .errors import EdgeListParseError

CSR_MAGIC = b"GSCR"
CSR_VERSION = 1
IDMAP_MAGIC = b"GSID"


@dataclass(frozen=True)
class Graph:
    """Adjacency in compressed sparse row form over dense vertex ids [0, N).

    ``offsets`` has length N+1 and is non-decreasing; the out-neighbors of v
    are ``targets[offsets[v]:offsets[v+1]]``. Undirected graphs store each
    edge in both directions.
    """

    num_nodes: int
    num_edges: int
    offsets: np.ndarray
    targets: np.ndarray
    directed: bool
    external_ids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.offsets.shape != (self.num_nodes + 1,):
            raise ValueError("offsets must have length num_nodes + 1")
        if self.offsets[0] != 0 or self.offsets[-1] != self.num_edges:
            raise ValueError("offsets must start at 0 and end at num_edges")
        if np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must be non-decreasing")
        if self.num_edges and (
            self.targets.min() < 0 or self.targets.max() >= self.num_nodes
        ):
            raise ValueError("edge target out of range")

    def neighbors(self, v: int) -> np.ndarray:
        """Out-neighbors of v in storage order; empty for sinks."""
        if not 0 <= v < self.num_nodes:
            raise IndexError(f"vertex {v} out of range [0, {self.num_nodes})")
        return self.targets[self.offsets[v] : self.offsets[v + 1]]

    def out_degree(self, v: int) -> int:
        if not 0 <= v < self.num_nodes:
            raise IndexError(f"vertex {v} out of range [0, {self.num_nodes})")
        return int(self.offsets[v + 1] - self.offsets[v])

    @property
    def out_degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def is_symmetric(self) -> bool:
        """True when (u, v) present implies (v, u) present."""
        src = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.out_degrees)
        fwd = np.stack([src, self.targets]).T
        rev = np.stack([self.targets, src]).T
        key = lambda a: np.lexsort((a[:, 1], a[:, 0]))
        return np.array_equal(fwd[key(fwd)], rev[key(rev)])

    @staticmethod
    def from_edge_array(
        pairs: np.ndarray, num_nodes: int, directed: bool
    ) -> "Graph":
        """Build a graph from an (m, 2) array of dense-id edges.

        Parallel edges are dropped; undirected input is mirrored before
        deduplication. Self-loops are kept as single entries.
        """
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if not directed and len(pairs):
            pairs = np.concatenate([pairs, pairs[:, ::-1]])
        if len(pairs):
            pairs = np.unique(pairs, axis=0)
        order = np.lexsort((pairs[:, 1], pairs[:, 0])) if len(pairs) else []
        pairs = pairs[order] if len(pairs) else pairs.reshape(0, 2)
        counts = np.bincount(pairs[:, 0], minlength=num_nodes) if len(pairs) else np.zeros(num_nodes, dtype=np.int64)
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return Graph(
            num_nodes=num_nodes,
            num_edges=len(pairs),
            offsets=offsets,
            targets=pairs[:, 1].copy(),
            directed=directed,
        )


def load_edge_list(source: IO[bytes] | IO[str] | Iterable[str], directed: bool = False) -> Graph:
    """Parse "u v" lines into a Graph.

    Vertex ids are compacted to [0, N) in order of first appearance;
    the original ids are kept in ``external_ids``. Duplicate edges are
    dropped; '#'-prefixed lines and blank lines are ignored.
    """
    us: list[int] = []
    vs: list[int] = []
    for line_no, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8", errors="replace")
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise EdgeListParseError(line_no, f"expected 'u v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise EdgeListParseError(line_no, f"non-integer vertex id in {line!r}") from None
        if u < 0 or v < 0:
            raise EdgeListParseError(line_no, f"negative vertex id in {line!r}")
        us.append(u)
        vs.append(v)
    if not us:
        raise EdgeListParseError(0, "empty edge list")

    flat = np.empty(2 * len(us), dtype=np.int64)
    flat[0::2] = us
    flat[1::2] = vs
    uniq, first_pos = np.unique(flat, return_index=True)
    external = uniq[np.argsort(first_pos)]
    remap = {int(ext): i for i, ext in enumerate(external)}
    pairs = np.empty((len(us), 2), dtype=np.int64)
    pairs[:, 0] = [remap[u] for u in us]
    pairs[:, 1] = [remap[v] for v in vs]

    g = Graph.from_edge_array(pairs, num_nodes=len(external), directed=directed)
    identity = np.array_equal(external, np.arange(len(external)))
    return Graph(
        num_nodes=g.num_nodes,
        num_edges=g.num_edges,
        offsets=g.offsets,
        targets=g.targets,
        directed=directed,
        external_ids=None if identity else external,
    )


@dataclass(frozen=True)
class NodePartition:
    """Total assignment of vertex ids to trainer partitions."""

    num_parts: int
    assignment: np.ndarray

    def nodes_of(self, part: int) -> np.ndarray:
        return np.nonzero(self.assignment == part)[0]


def split_sizes(n: int, parts: int) -> np.ndarray:
    """Contiguous block sizes differing by at most one; no empty block when parts <= n."""
    base, extra = divmod(n, parts)
    return np.array([base + (1 if i < extra else 0) for i in range(parts)], dtype=np.int64)


def partition_nodes(g: Graph, num_parts: int, scheme: str = "range") -> NodePartition:
    """Assign each node to a part via contiguous ranges or id mod num_parts."""
    if num_parts < 1:
        raise ValueError("num_parts must be >= 1")
    n = g.num_nodes
    if scheme == "range":
        bounds = np.zeros(num_parts + 1, dtype=np.int64)
        np.cumsum(split_sizes(n, num_parts), out=bounds[1:])
        assignment = np.searchsorted(bounds, np.arange(n), side="right") - 1
    elif scheme == "hash":
        assignment = np.arange(n, dtype=np.int64) % num_parts
    else:
        raise ValueError(f"unknown partition scheme {scheme!r}")
    return NodePartition(num_parts=num_parts, assignment=assignment.astype(np.int64))


def save_csr(g: Graph, path: str) -> None:
    """Write the binary CSR cache; the external-id map goes in a sidecar file."""
    with open(path, "wb") as f:
        f.write(CSR_MAGIC)
        f.write(struct.pack("<B", CSR_VERSION))
        f.write(struct.pack("<qq", g.num_nodes, g.num_edges))
        f.write(g.offsets.astype("<i8").tobytes())
        f.write(g.targets.astype("<i8").tobytes())
    if g.external_ids is not None:
        with open(path + ".ids", "wb") as f:
            f.write(IDMAP_MAGIC)
            f.write(struct.pack("<q", len(g.external_ids)))
            f.write(g.external_ids.astype("<i8").tobytes())


def load_csr(path: str) -> Graph:
    """Read a binary CSR cache written by :func:`save_csr`.

    The cache does not record directedness; a symmetric adjacency loads as
    undirected, which is behavior-preserving for every operation here.
    """
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CSR_MAGIC:
            raise ValueError(f"{path}: not a CSR cache (bad magic {magic!r})")
        (version,) = struct.unpack("<B", f.read(1))
        if version != CSR_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        n, m = struct.unpack("<qq", f.read(16))
        offsets = np.frombuffer(f.read(8 * (n + 1)), dtype="<i8").astype(np.int64)
        targets = np.frombuffer(f.read(8 * m), dtype="<i8").astype(np.int64)
    external = None
    try:
        with open(path + ".ids", "rb") as f:
            if f.read(4) == IDMAP_MAGIC:
                (k,) = struct.unpack("<q", f.read(8))
                external = np.frombuffer(f.read(8 * k), dtype="<i8").astype(np.int64)
    except FileNotFoundError:
        pass
    g = Graph(
        num_nodes=n,
        num_edges=m,
        offsets=offsets,
        targets=targets,
        directed=True,
        external_ids=external,
    )
    return Graph(
        num_nodes=n,
        num_edges=m,
        offsets=offsets,
        targets=targets,
        directed=not g.is_symmetric(),
        external_ids=external,
    )
