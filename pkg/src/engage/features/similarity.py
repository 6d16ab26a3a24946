"""Clusters of users with similar follower sets.

Pairs whose follower sets have Jaccard similarity at or above a threshold
are joined; clusters are the connected components. Candidate pairs come
from an inverted index over set prefixes (All-Pairs style prefix
filtering), so users that share no rare follower are never compared.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from typing import Iterable, Mapping


def jaccard(a: frozenset | set, b: frozenset | set) -> float:
    if not a and not b:
        return 0.0
    inter = len(a & b)
    return inter / (len(a) + len(b) - inter)


class UnionFind:
    def __init__(self, items: Iterable[int]):
        self.parent = {x: x for x in items}

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller id becomes the root so labels are order independent
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def labels(self) -> dict[int, int]:
        """Map each item to the smallest item of its component."""
        return {x: self.find(x) for x in self.parent}


def _prefix_len(size: int, threshold: float) -> int:
    # sets with J >= t overlap in at least ceil(t * size) elements
    need = math.ceil(threshold * size - 1e-9)
    return size - need + 1


def similar_pairs(followers: Mapping[int, frozenset], threshold: float) -> list[tuple[int, int]]:
    """All user pairs ``(a, b)`` with ``a < b`` and Jaccard >= threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    freq = Counter(f for fs in followers.values() for f in fs)
    # rarest followers first so prefixes are short and selective
    rank = {f: i for i, f in enumerate(sorted(freq, key=lambda f: (freq[f], f)))}
    users = sorted((u for u in followers if followers[u]), key=lambda u: (len(followers[u]), u))
    ordered = {u: sorted(followers[u], key=rank.__getitem__) for u in users}

    index: dict[int, list[int]] = defaultdict(list)
    pairs = []
    for x in users:
        toks = ordered[x]
        n = len(toks)
        min_size = threshold * n
        seen = set()
        for tok in toks[:_prefix_len(n, threshold)]:
            for y in index[tok]:
                if y in seen:
                    continue
                seen.add(y)
                # y was indexed earlier so |y| <= |x|
                if len(followers[y]) < min_size - 1e-9:
                    continue
                if jaccard(followers[x], followers[y]) >= threshold:
                    pairs.append((min(x, y), max(x, y)))
        for tok in toks[:_prefix_len(n, threshold)]:
            index[tok].append(x)
    pairs.sort()
    return pairs


def similar_user_clusters(followers: Mapping[int, frozenset], threshold: float = 0.5) -> dict[int, int]:
    """Map every user in ``followers`` to a cluster id.

    The id of a cluster is its smallest user id. Users with no followers
    (Jaccard with an empty set is 0) end up in singleton clusters.
    """
    uf = UnionFind(sorted(followers))
    for a, b in similar_pairs(followers, threshold):
        uf.union(a, b)
    return uf.labels()


def cluster_members(clusters: Mapping[int, int]) -> dict[int, list[int]]:
    out: dict[int, list[int]] = defaultdict(list)
    for user in sorted(clusters):
        out[clusters[user]].append(user)
    return dict(out)
