"""Historical engagement counts, similar-user clusters and communities."""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from ..records import FollowerSets, InteractionRecord, LogFormatError
from .community import community_partitions
from .similarity import similar_user_clusters

STORE_HEADER = "#feature-store v1"
COUNT_MAX = 2**32 - 1


class ReactionCounts(NamedTuple):
    like: int = 0
    reply: int = 0
    retweet: int = 0
    quote: int = 0


ZERO = ReactionCounts()


@dataclass
class StoreConfig:
    jaccard_threshold: float = 0.5
    community_seed: int = 0


@dataclass(eq=False)
class FeatureStore:
    pair_counts: dict[tuple[int, int], ReactionCounts] = field(default_factory=dict)
    received_counts: dict[int, ReactionCounts] = field(default_factory=dict)
    given_counts: dict[int, ReactionCounts] = field(default_factory=dict)
    given_counts_by_language: dict[tuple[int, int], ReactionCounts] = field(default_factory=dict)
    hashtag_counts: dict[tuple[int, int], ReactionCounts] = field(default_factory=dict)
    tweet_counts: dict[int, ReactionCounts] = field(default_factory=dict)
    similar_user_clusters: dict[int, int] = field(default_factory=dict)
    # (cluster id, engaging user) -> counts summed over every cluster member
    cluster_pair_counts: dict[tuple[int, int], ReactionCounts] = field(default_factory=dict)
    community_partitions: tuple[dict[int, tuple[int, int]], ...] = field(
        default_factory=lambda: ({}, {}, {}, {})
    )

    def __eq__(self, other):
        if not isinstance(other, FeatureStore):
            return NotImplemented
        return all(getattr(self, name) == getattr(other, name) for name in _SECTIONS_ALL)

    def similar_counts(self, engaged: int, engaging: int) -> ReactionCounts:
        """Engagements of ``engaging`` with the other members of ``engaged``'s cluster."""
        cid = self.similar_user_clusters.get(engaged)
        if cid is None:
            return ZERO
        total = self.cluster_pair_counts.get((cid, engaging), ZERO)
        own = self.pair_counts.get((engaged, engaging), ZERO)
        return ReactionCounts(*(t - o for t, o in zip(total, own)))


def _freeze(acc: Mapping) -> dict:
    return {k: ReactionCounts(*(min(c, COUNT_MAX) for c in v)) for k, v in acc.items()}


def _bump(acc, key, flags) -> None:
    row = acc.get(key)
    if row is None:
        row = acc[key] = [0, 0, 0, 0]
    for r in flags:
        row[r] += 1


def build_store(history: Sequence[InteractionRecord], followers: FollowerSets,
                config: Optional[StoreConfig] = None,
                clusters: Optional[Mapping[int, int]] = None) -> FeatureStore:
    """Count every feature family over ``history``.

    ``clusters`` may carry a precomputed similar-user clustering; it only
    depends on the follower sets, so callers building many stores over
    one follower graph compute it once.
    """
    config = config or StoreConfig()
    pair: dict = {}
    received: dict = {}
    given: dict = {}
    by_lang: dict = {}
    tags: dict = {}
    tweets: dict = {}
    for rec in history:
        flags = [r for r, t in enumerate(rec.reaction_timestamps) if t is not None]
        if not flags:
            continue
        a, b = rec.engaged_user, rec.engaging_user
        _bump(pair, (a, b), flags)
        _bump(received, a, flags)
        _bump(given, b, flags)
        _bump(by_lang, (b, rec.language), flags)
        _bump(tweets, rec.tweet_id, flags)
        for h in set(rec.hashtags):
            _bump(tags, (b, h), flags)

    if clusters is None:
        clusters = similar_user_clusters(followers, config.jaccard_threshold)
    clusters = dict(clusters)
    cluster_acc: dict = defaultdict(lambda: [0, 0, 0, 0])
    for (a, b), counts in pair.items():
        cid = clusters.get(a)
        if cid is None:
            continue
        row = cluster_acc[(cid, b)]
        for r in range(4):
            row[r] += counts[r]

    return FeatureStore(
        pair_counts=_freeze(pair),
        received_counts=_freeze(received),
        given_counts=_freeze(given),
        given_counts_by_language=_freeze(by_lang),
        hashtag_counts=_freeze(tags),
        tweet_counts=_freeze(tweets),
        similar_user_clusters=clusters,
        cluster_pair_counts=_freeze(cluster_acc),
        community_partitions=community_partitions(history, seed=config.community_seed),
    )


# -- serialization ------------------------------------------------------------

_COUNT_SECTIONS = {
    "pair_counts": 2,
    "received_counts": 1,
    "given_counts": 1,
    "given_counts_by_language": 2,
    "hashtag_counts": 2,
    "tweet_counts": 1,
    "cluster_pair_counts": 2,
}
_COMMUNITY_SECTIONS = ("community_like", "community_reply", "community_retweet", "community_quote")
_SECTIONS_ALL = tuple(_COUNT_SECTIONS) + ("similar_user_clusters", "community_partitions")


def _key_fields(key, arity: int) -> list[str]:
    return [str(key)] if arity == 1 else [str(k) for k in key]


def save_store(path, store: FeatureStore, meta: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(STORE_HEADER + "\n")
        if meta is not None:
            fh.write(f"#config {meta}\n")
        for name, arity in _COUNT_SECTIONS.items():
            table = getattr(store, name)
            fh.write(f"[{name}] {len(table)}\n")
            for key in sorted(table):
                fh.write("\t".join(_key_fields(key, arity) + [str(c) for c in table[key]]) + "\n")
        fh.write(f"[similar_user_clusters] {len(store.similar_user_clusters)}\n")
        for user in sorted(store.similar_user_clusters):
            fh.write(f"{user}\t{store.similar_user_clusters[user]}\n")
        for name, part in zip(_COMMUNITY_SECTIONS, store.community_partitions):
            fh.write(f"[{name}] {len(part)}\n")
            for user in sorted(part):
                pid, size = part[user]
                fh.write(f"{user}\t{pid}\t{size}\n")
        fh.write("#end\n")


def load_store(path) -> FeatureStore:
    if not os.path.exists(path):
        raise FileNotFoundError(f"feature store not found: {path}")
    store = FeatureStore()
    parts: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        lines = iter(enumerate(fh, start=1))
        _, first = next(lines, (1, ""))
        if first.rstrip("\n") != STORE_HEADER:
            raise LogFormatError(f"bad header {first.rstrip()!r}", path, 1)
        ended = False
        for lineno, line in lines:
            line = line.rstrip("\n")
            if line.startswith("#config "):
                continue
            if line == "#end":
                ended = True
                break
            if not line.startswith("["):
                raise LogFormatError(f"expected section header, got {line!r}", path, lineno)
            name, _, count = line[1:].partition("] ")
            try:
                n = int(count)
            except ValueError:
                raise LogFormatError(f"bad section header {line!r}", path, lineno) from None
            rows = []
            for _ in range(n):
                lineno, row = next(lines, (lineno, None))
                if row is None:
                    raise LogFormatError(f"section {name} truncated", path, lineno)
                try:
                    rows.append([int(x) for x in row.rstrip("\n").split("\t")])
                except ValueError:
                    raise LogFormatError("non-integer field", path, lineno) from None
            if name in _COUNT_SECTIONS:
                arity = _COUNT_SECTIONS[name]
                table = {}
                for vals in rows:
                    if len(vals) != arity + 4:
                        raise LogFormatError(f"section {name}: bad row width", path, lineno)
                    key = vals[0] if arity == 1 else tuple(vals[:arity])
                    table[key] = ReactionCounts(*vals[arity:])
                setattr(store, name, table)
            elif name == "similar_user_clusters":
                store.similar_user_clusters = {u: c for u, c in rows}
            elif name in _COMMUNITY_SECTIONS:
                parts[name] = {u: (c, s) for u, c, s in rows}
            else:
                raise LogFormatError(f"unknown section {name!r}", path, lineno)
        if not ended:
            raise LogFormatError("missing #end (truncated file?)", path)
    store.community_partitions = tuple(parts.get(n, {}) for n in _COMMUNITY_SECTIONS)
    return store
