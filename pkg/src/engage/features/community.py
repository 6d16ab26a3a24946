"""Greedy modularity communities over reaction graphs.

Each reaction type spans a graph with one edge per historical engagement
(engaged -> engaging). For modularity the direction is dropped and
parallel edges become an integer weight. Partitioning is Louvain style:
local node moves until no gain, collapse communities into super-nodes,
repeat; then one final sweep of single-node moves on the original graph.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..records import InteractionRecord

Edge = tuple[int, int]


def reaction_graphs(history: Iterable[InteractionRecord]) -> tuple[list[int], list[dict[Edge, int]]]:
    """Users seen in ``history`` and one undirected weighted edge map per reaction."""
    users = set()
    graphs: list[dict[Edge, int]] = [defaultdict(int) for _ in range(4)]
    for rec in history:
        a, b = rec.engaged_user, rec.engaging_user
        users.add(a)
        users.add(b)
        key = (a, b) if a < b else (b, a)
        for r, t in enumerate(rec.reaction_timestamps):
            if t is not None:
                graphs[r][key] += 1
    return sorted(users), [dict(g) for g in graphs]


def modularity(partition: Mapping[int, int], edges: Mapping[Edge, float]) -> float:
    """Newman modularity of an undirected weighted graph."""
    m2 = 2.0 * sum(edges.values())
    if m2 == 0:
        return 0.0
    inside: dict[int, float] = defaultdict(float)
    total: dict[int, float] = defaultdict(float)
    for (u, v), w in edges.items():
        total[partition[u]] += w
        total[partition[v]] += w
        if partition[u] == partition[v]:
            inside[partition[u]] += 2 * w
    return sum(inside[c] / m2 - (total[c] / m2) ** 2 for c in total)


class _Level:
    """Adjacency at one aggregation level; node ids are 0..n-1."""

    def __init__(self, n: int, adj: list[dict[int, float]], self_loops: list[float]):
        self.n = n
        self.adj = adj
        self.self_loops = self_loops
        self.degree = [sum(adj[i].values()) + 2 * self_loops[i] for i in range(n)]


def _move_nodes(level: _Level, comm: list[int], m2: float, rng, max_sweeps: int) -> bool:
    tot = defaultdict(float)
    for i in range(level.n):
        tot[comm[i]] += level.degree[i]
    improved = False
    for _ in range(max_sweeps):
        moved = False
        for i in rng.permutation(level.n).tolist():
            ci = comm[i]
            ki = level.degree[i]
            links: dict[int, float] = defaultdict(float)
            for j, w in level.adj[i].items():
                links[comm[j]] += w
            tot[ci] -= ki
            best, best_gain = ci, links.get(ci, 0.0) - tot[ci] * ki / m2
            for c in sorted(links):
                gain = links[c] - tot[c] * ki / m2
                if gain > best_gain + 1e-12:
                    best, best_gain = c, gain
            tot[best] += ki
            if best != ci:
                comm[i] = best
                moved = True
                improved = True
        if not moved:
            break
    return improved


def _aggregate(level: _Level, comm: list[int]) -> tuple[_Level, list[int]]:
    labels = {c: k for k, c in enumerate(sorted(set(comm)))}
    new_id = [labels[c] for c in comm]
    n = len(labels)
    adj: list[dict[int, float]] = [defaultdict(float) for _ in range(n)]
    loops = [0.0] * n
    for i in range(level.n):
        ci = new_id[i]
        loops[ci] += level.self_loops[i]
        for j, w in level.adj[i].items():
            cj = new_id[j]
            if ci == cj:
                # each internal edge is visited from both ends
                loops[ci] += w / 2
            else:
                adj[ci][cj] += w
    return _Level(n, [dict(a) for a in adj], loops), new_id


def louvain(nodes: Sequence[int], edges: Mapping[Edge, float], seed: int = 0,
            max_levels: int = 32, max_sweeps: int = 64) -> dict[int, int]:
    """Partition ``nodes``; returns node -> community id (smallest member id)."""
    all_nodes = sorted(nodes)
    touched = {u for e in edges for u in e}
    # isolated nodes never gain from moving; they stay singletons
    nodes = [u for u in all_nodes if u in touched]
    isolated = {u: u for u in all_nodes if u not in touched}
    index = {u: i for i, u in enumerate(nodes)}
    n = len(nodes)
    adj: list[dict[int, float]] = [defaultdict(float) for _ in range(n)]
    for (u, v), w in edges.items():
        if u == v:
            raise ValueError("self-loops are not expected in reaction graphs")
        adj[index[u]][index[v]] += w
        adj[index[v]][index[u]] += w
    base = _Level(n, [dict(a) for a in adj], [0.0] * n)
    m2 = sum(base.degree)
    if m2 == 0:
        return {u: u for u in all_nodes}

    rng = np.random.default_rng(seed)
    member = list(range(n))  # original node -> node at current level
    level = base
    for _ in range(max_levels):
        comm = list(range(level.n))
        if not _move_nodes(level, comm, m2, rng, max_sweeps):
            break
        level, new_id = _aggregate(level, comm)
        member = [new_id[member[i]] for i in range(n)]
        if level.n == 1:
            break

    # refinement: one sweep of single-node moves on the original graph
    _move_nodes(base, member, m2, rng, max_sweeps=1)
    out = _relabel(nodes, member)
    out.update(isolated)
    return out


def _relabel(nodes: Sequence[int], comm: Sequence[int]) -> dict[int, int]:
    smallest: dict[int, int] = {}
    for u, c in zip(nodes, comm):
        if c not in smallest or u < smallest[c]:
            smallest[c] = u
    return {u: smallest[c] for u, c in zip(nodes, comm)}


def community_partitions(history: Iterable[InteractionRecord], seed: int = 0) -> tuple[dict[int, tuple[int, int]], ...]:
    """Four maps (like, reply, retweet, quote): user -> (partition id, partition size)."""
    users, graphs = reaction_graphs(history)
    out = []
    for r, g in enumerate(graphs):
        part = louvain(users, g, seed=seed + r)
        sizes: dict[int, int] = defaultdict(int)
        for c in part.values():
            sizes[c] += 1
        out.append({u: (c, sizes[c]) for u, c in part.items()})
    return tuple(out)


def same_partition(partition: Mapping[int, tuple[int, int]], a: int, b: int) -> tuple[int, float]:
    """(same-partition flag, inverse partition size or 0) for a user pair."""
    pa = partition.get(a)
    pb = partition.get(b)
    if pa is None or pb is None or pa[0] != pb[0]:
        return 0, 0.0
    return 1, 1.0 / pa[1]
