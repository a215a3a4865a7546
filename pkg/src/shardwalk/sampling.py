"""Random walks, skip-gram pair extraction, negative sampling, edge batches,
and fanout neighbor sampling.

Every sampler is a pure function of (graph, rng), so a trainer that owns its
own seeded generator reproduces its batch stream bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph


@dataclass(frozen=True)
class WalkBatch:
    """One walk per source node; walks may stop early at sinks."""

    walks: list[np.ndarray]
    source_count: int

    def node_occurrences(self) -> np.ndarray:
        return np.concatenate(self.walks)

    def distinct_nodes(self) -> np.ndarray:
        return np.unique(self.node_occurrences())


@dataclass(frozen=True)
class PairBatch:
    """Skip-gram training pairs with per-pair negative samples."""

    centers: np.ndarray
    contexts: np.ndarray
    negatives: np.ndarray  # shape (len(centers), num_neg)

    def __post_init__(self):
        if not (len(self.centers) == len(self.contexts) == self.negatives.shape[0]):
            raise ValueError("centers, contexts and negatives must have equal row counts")

    def distinct_nodes(self) -> np.ndarray:
        return np.unique(
            np.concatenate([self.centers, self.contexts, self.negatives.ravel()])
        )


@dataclass(frozen=True)
class LineBatch:
    """Uniformly sampled edges plus negatives for edge-proximity training."""

    sources: np.ndarray
    destinations: np.ndarray
    negatives: np.ndarray  # shape (B, num_neg)

    def distinct_nodes(self) -> np.ndarray:
        return np.unique(
            np.concatenate([self.sources, self.destinations, self.negatives.ravel()])
        )


def random_walk(g: Graph, start: int, walk_len: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random walk of at most walk_len nodes; truncates at sinks."""
    if walk_len < 1:
        raise ValueError("walk_len must be >= 1")
    if not 0 <= start < g.num_nodes:
        raise IndexError(f"start {start} out of range")
    walk = np.empty(walk_len, dtype=np.int64)
    walk[0] = start
    cur = start
    for i in range(1, walk_len):
        nbrs = g.neighbors(cur)
        if len(nbrs) == 0:
            return walk[:i].copy()
        cur = int(nbrs[rng.integers(len(nbrs))])
        walk[i] = cur
    return walk


def walk_batch(g: Graph, sources: np.ndarray, walk_len: int, rng: np.random.Generator) -> WalkBatch:
    sources = np.asarray(sources, dtype=np.int64)
    if len(sources) == 0:
        raise ValueError("sources must be non-empty")
    walks = [random_walk(g, int(s), walk_len, rng) for s in sources]
    return WalkBatch(walks=walks, source_count=len(sources))


def skipgram_pairs(walk: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """All (walk[i], walk[j]) with 0 < |i - j| <= window, ordered by i then j."""
    if window < 1:
        raise ValueError("window must be >= 1")
    walk = np.asarray(walk, dtype=np.int64)
    centers = []
    contexts = []
    n = len(walk)
    for i in range(n):
        for j in range(max(0, i - window), min(n, i + window + 1)):
            if j != i:
                centers.append(walk[i])
                contexts.append(walk[j])
    return (
        np.array(centers, dtype=np.int64),
        np.array(contexts, dtype=np.int64),
    )


class AliasTable:
    """O(1) categorical sampling via the alias method (Vose's construction)."""

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        if len(weights) == 0 or weights.sum() <= 0 or np.any(weights < 0):
            raise ValueError("weights must be non-negative with positive sum")
        self.probs_ = weights / weights.sum()
        n = len(weights)
        scaled = self.probs_ * n
        self._accept = np.ones(n, dtype=np.float64)
        self._alias = np.arange(n, dtype=np.int64)
        small = [i for i, p in enumerate(scaled) if p < 1.0]
        large = [i for i, p in enumerate(scaled) if p >= 1.0]
        scaled = scaled.copy()
        while small and large:
            s = small.pop()
            l = large.pop()
            self._accept[s] = scaled[s]
            self._alias[s] = l
            scaled[l] = (scaled[l] + scaled[s]) - 1.0
            (small if scaled[l] < 1.0 else large).append(l)

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if k < 0:
            raise ValueError("k must be >= 0")
        if k == 0:
            return np.empty(0, dtype=np.int64)
        idx = rng.integers(len(self._accept), size=k)
        keep = rng.random(k) < self._accept[idx]
        return np.where(keep, idx, self._alias[idx]).astype(np.int64)


def build_negative_table(g: Graph, exponent: float = 0.75) -> AliasTable:
    """Degree^exponent unigram table; zero-degree nodes are never drawn."""
    weights = g.out_degrees.astype(np.float64) ** exponent
    weights[g.out_degrees == 0] = 0.0
    if weights.sum() <= 0:
        raise ValueError("all nodes have degree zero")
    return AliasTable(weights)


def sample_negatives(table: AliasTable, k: int, rng: np.random.Generator) -> np.ndarray:
    return table.sample(k, rng)


def pair_batch_from_walks(
    batch: WalkBatch, window: int, num_neg: int, rng: np.random.Generator
) -> PairBatch:
    """Assemble skip-gram pairs with in-batch negatives.

    Negatives are drawn uniformly from the walk-node occurrence multiset of
    this batch. Occurrence frequency tracks walk visit frequency (roughly
    degree-proportional), and it keeps the batch's distinct-node count within
    the B x walk_len budget that sizes every store request.
    """
    centers = []
    contexts = []
    for walk in batch.walks:
        c, x = skipgram_pairs(walk, window)
        centers.append(c)
        contexts.append(x)
    centers = np.concatenate(centers) if centers else np.empty(0, dtype=np.int64)
    contexts = np.concatenate(contexts) if contexts else np.empty(0, dtype=np.int64)
    pool = batch.node_occurrences()
    negatives = pool[rng.integers(len(pool), size=(len(centers), num_neg))]
    return PairBatch(centers=centers, contexts=contexts, negatives=negatives)


def line_batch(
    g: Graph,
    B: int,
    num_neg: int,
    rng: np.random.Generator,
    table: AliasTable | None = None,
    edge_pool: np.ndarray | None = None,
) -> LineBatch:
    """Draw B edges uniformly (from edge_pool when given) plus global negatives."""
    if g.num_edges < 1:
        raise ValueError("graph has no edges")
    if table is None:
        table = build_negative_table(g)
    if edge_pool is None:
        eidx = rng.integers(g.num_edges, size=B)
    else:
        if len(edge_pool) == 0:
            raise ValueError("edge_pool is empty")
        eidx = edge_pool[rng.integers(len(edge_pool), size=B)]
    src = np.searchsorted(g.offsets, eidx, side="right") - 1
    dst = g.targets[eidx]
    negatives = table.sample(B * num_neg, rng).reshape(B, num_neg)
    return LineBatch(sources=src.astype(np.int64), destinations=dst, negatives=negatives)


def partition_edge_pool(g: Graph, nodes: np.ndarray) -> np.ndarray:
    """Indices of edges whose source lies in ``nodes`` (a trainer's share of E)."""
    ranges = [np.arange(g.offsets[v], g.offsets[v + 1]) for v in np.asarray(nodes)]
    if not ranges:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(ranges).astype(np.int64)


@dataclass(frozen=True)
class FanoutSpec:
    """Per-hop caps [F_1..F_h] on sampled neighbors."""

    fanouts: tuple[int, ...]

    def __post_init__(self):
        if len(self.fanouts) < 1 or any(f < 1 for f in self.fanouts):
            raise ValueError("fanouts must be a non-empty list of positive counts")

    @property
    def num_hops(self) -> int:
        return len(self.fanouts)


@dataclass(frozen=True)
class SampledSubgraph:
    """Result of multi-hop neighbor sampling for one mini-batch.

    ``layers[i]`` holds hop-(i+1) edges as (sources, destinations) arrays;
    sources of layer i are drawn from the unique destinations of layer i-1
    (layer 0 expands the seeds).
    """

    seeds: np.ndarray
    layers: list[tuple[np.ndarray, np.ndarray]]
    unique_nodes: np.ndarray

    def occurrences(self) -> np.ndarray:
        """Seeds plus every sampled-neighbor visit, with multiplicity."""
        parts = [self.seeds] + [dst for _, dst in self.layers]
        return np.concatenate(parts)


def fanout_sample(
    g: Graph, seeds: np.ndarray, spec: FanoutSpec, rng: np.random.Generator
) -> SampledSubgraph:
    """Sample up to F_i neighbors per frontier node at hop i, without replacement."""
    seeds = np.asarray(seeds, dtype=np.int64)
    if len(seeds) == 0:
        raise ValueError("seeds must be non-empty")
    if len(seeds) and (seeds.min() < 0 or seeds.max() >= g.num_nodes):
        raise IndexError("seed out of range")
    frontier = _stable_unique(seeds)
    layers: list[tuple[np.ndarray, np.ndarray]] = []
    touched = [seeds]
    for fanout in spec.fanouts:
        srcs = []
        dsts = []
        for v in frontier:
            nbrs = g.neighbors(int(v))
            if len(nbrs) == 0:
                continue
            if len(nbrs) <= fanout:
                chosen = nbrs
            else:
                chosen = nbrs[rng.permutation(len(nbrs))[:fanout]]
            srcs.append(np.full(len(chosen), v, dtype=np.int64))
            dsts.append(np.asarray(chosen, dtype=np.int64))
        src = np.concatenate(srcs) if srcs else np.empty(0, dtype=np.int64)
        dst = np.concatenate(dsts) if dsts else np.empty(0, dtype=np.int64)
        layers.append((src, dst))
        touched.append(dst)
        frontier = _stable_unique(dst)
    unique_nodes = np.unique(np.concatenate(touched))
    return SampledSubgraph(seeds=seeds, layers=layers, unique_nodes=unique_nodes)


def _stable_unique(a: np.ndarray) -> np.ndarray:
    _, idx = np.unique(a, return_index=True)
    return a[np.sort(idx)]
