"""Synthetic fixture graphs: path, star, cycle, stochastic block model, power law.

These back the test suite and `ingest --generate`, so no external datasets
are needed anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph


@dataclass(frozen=True)
class GeneratedGraph:
    graph: Graph
    # Community label per node for fixtures with planted structure, else None.
    labels: np.ndarray | None
    # Number of distinct undirected pairs (or directed arcs) the generator emitted.
    pair_count: int


def path_graph(n: int) -> GeneratedGraph:
    pairs = np.stack([np.arange(n - 1), np.arange(1, n)]).T
    return GeneratedGraph(Graph.from_edge_array(pairs, n, directed=False), None, n - 1)


def star_graph(leaves: int) -> GeneratedGraph:
    """Node 0 is the hub; nodes 1..leaves attach to it."""
    pairs = np.stack([np.zeros(leaves, dtype=np.int64), np.arange(1, leaves + 1)]).T
    return GeneratedGraph(Graph.from_edge_array(pairs, leaves + 1, directed=False), None, leaves)


def cycle_graph(n: int, directed: bool = False) -> GeneratedGraph:
    pairs = np.stack([np.arange(n), (np.arange(n) + 1) % n]).T
    return GeneratedGraph(Graph.from_edge_array(pairs, n, directed=directed), None, n)


def sbm_graph(
    n: int,
    num_blocks: int = 2,
    p_intra: float = 0.3,
    p_inter: float = 0.02,
    seed: int = 0,
) -> GeneratedGraph:
    """Stochastic block model with equal-size planted communities.

    Every unordered pair {u, v} is sampled once with probability p_intra when
    u and v share a block and p_inter otherwise. Isolated nodes are wired to a
    random same-block neighbor so every node can start a walk.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_blocks
    iu, iv = np.triu_indices(n, k=1)
    same = labels[iu] == labels[iv]
    prob = np.where(same, p_intra, p_inter)
    keep = rng.random(len(iu)) < prob
    pairs = np.stack([iu[keep], iv[keep]]).T
    degree = np.bincount(pairs.ravel(), minlength=n)
    extra = []
    for v in np.nonzero(degree == 0)[0]:
        mates = np.nonzero((labels == labels[v]) & (np.arange(n) != v))[0]
        extra.append((v, rng.choice(mates)))
    if extra:
        pairs = np.concatenate([pairs, np.array(extra, dtype=np.int64)])
    return GeneratedGraph(Graph.from_edge_array(pairs, n, directed=False), labels, len(pairs))


def power_law_graph(n: int, attach: int = 3, seed: int = 0) -> GeneratedGraph:
    """Preferential-attachment (Barabasi-Albert style) undirected graph.

    Each new node attaches to ``attach`` distinct existing nodes chosen
    proportionally to current degree, giving the heavy-tailed degree
    distribution that makes fetch-dedup interesting.
    """
    if n <= attach:
        raise ValueError("need n > attach")
    rng = np.random.default_rng(seed)
    # Seed clique keeps early attachment targets non-degenerate.
    core = attach + 1
    iu, iv = np.triu_indices(core, k=1)
    pairs = [np.stack([iu, iv]).T]
    # Repeated-endpoints list: sampling uniformly from it is degree-proportional.
    endpoints = list(np.concatenate([iu, iv]))
    for v in range(core, n):
        targets: set[int] = set()
        while len(targets) < attach:
            targets.add(int(endpoints[rng.integers(len(endpoints))]))
        for t in targets:
            pairs.append(np.array([[v, t]], dtype=np.int64))
            endpoints.extend((v, t))
    all_pairs = np.concatenate(pairs)
    return GeneratedGraph(Graph.from_edge_array(all_pairs, n, directed=False), None, len(all_pairs))


def regular_graph(n: int, degree: int, seed: int = 0) -> GeneratedGraph:
    """Random near-regular graph: each node links to ``degree`` distinct others."""
    rng = np.random.default_rng(seed)
    rows = []
    for v in range(n):
        others = rng.permutation(n - 1)[:degree]
        others = np.where(others >= v, others + 1, others)
        rows.append(np.stack([np.full(degree, v, dtype=np.int64), others]).T)
    pairs = np.concatenate(rows)
    return GeneratedGraph(Graph.from_edge_array(pairs, n, directed=False), None, len(pairs))


GENERATORS = {
    "path": path_graph,
    "star": star_graph,
    "cycle": cycle_graph,
    "sbm": sbm_graph,
    "powerlaw": power_law_graph,
    "regular": regular_graph,
}
