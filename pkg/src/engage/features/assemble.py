"""Turn a record plus the precomputed stores into model inputs.

Numeric block, in order (``NUMERIC_NAMES``): seven families of four
reaction counts (pair, received by author, given by reactor, given in
the tweet's language, with the tweet's hashtags, with authors similar to
this one, on this tweet id), then follower/following counts of both
users, both account ages in days, and the tweet's hashtag count.

Reaction fields of the record being featurised are never read.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..records import REACTIONS, InteractionRecord
from ..sketch import SketchCodec, encode_batch, raw_counts
from .community import same_partition
from .store import ZERO, FeatureStore

DAY = 86400

COUNT_FAMILIES = ("pair", "received", "given", "given_lang", "hashtag", "similar", "tweet")
NUMERIC_NAMES = tuple(f"{fam}_{r}" for fam in COUNT_FAMILIES for r in REACTIONS) + (
    "engaged_followers",
    "engaged_following",
    "engaging_followers",
    "engaging_following",
    "engaged_account_age_days",
    "engaging_account_age_days",
    "hashtag_count",
)
DEFAULT_LANGUAGE_VOCAB = 66


def categorical_spec(language_vocab: int = DEFAULT_LANGUAGE_VOCAB) -> tuple[tuple[str, int], ...]:
    """(name, vocabulary size) per categorical column; languages get one overflow bucket."""
    return (
        ("language", language_vocab + 1),
        ("tweet_type", 4),
        ("day_of_week", 7),
        ("hour_of_day", 24),
        ("media", 16),
        ("engaged_verified", 2),
        ("engaging_verified", 2),
        ("engaging_follows_engaged", 2),
    ) + tuple((f"same_community_{r}", 2) for r in REACTIONS)


@dataclass(frozen=True)
class FeatureLayout:
    sketch_size: int
    categorical: tuple[tuple[str, int], ...]
    numeric: tuple[str, ...] = NUMERIC_NAMES
    n_strengths: int = 4

    @classmethod
    def for_codec(cls, codec: SketchCodec, language_vocab: int = DEFAULT_LANGUAGE_VOCAB) -> "FeatureLayout":
        return cls(codec.params.size, categorical_spec(language_vocab))

    @property
    def language_vocab(self) -> int:
        return self.categorical[0][1] - 1

    def to_dict(self) -> dict:
        return {
            "sketch_size": self.sketch_size,
            "categorical": [list(c) for c in self.categorical],
            "numeric": list(self.numeric),
            "n_strengths": self.n_strengths,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureLayout":
        return cls(
            int(d["sketch_size"]),
            tuple((str(n), int(v)) for n, v in d["categorical"]),
            tuple(d["numeric"]),
            int(d["n_strengths"]),
        )


@dataclass
class AssembledFeatures:
    sketch: np.ndarray  # (sketch_size,) float32
    numeric: np.ndarray  # (len(NUMERIC_NAMES),) float64, raw values
    categorical: np.ndarray  # (n_categorical,) int64
    community_strengths: np.ndarray  # (4,) float32


@dataclass
class FeatureBatch:
    """Column blocks for ``n`` rows; row ``i`` corresponds to ``AssembledFeatures``."""

    sketch: np.ndarray
    numeric: np.ndarray
    categorical: np.ndarray
    community_strengths: np.ndarray

    def __len__(self) -> int:
        return self.numeric.shape[0]

    def take(self, idx) -> "FeatureBatch":
        return FeatureBatch(self.sketch[idx], self.numeric[idx], self.categorical[idx],
                            self.community_strengths[idx])

    def row(self, i: int) -> AssembledFeatures:
        return AssembledFeatures(self.sketch[i], self.numeric[i], self.categorical[i],
                                 self.community_strengths[i])

    @classmethod
    def stack(cls, rows: Sequence[AssembledFeatures]) -> "FeatureBatch":
        return cls(
            np.stack([r.sketch for r in rows]),
            np.stack([r.numeric for r in rows]),
            np.stack([r.categorical for r in rows]),
            np.stack([r.community_strengths for r in rows]),
        )

    @classmethod
    def concat(cls, batches: Sequence["FeatureBatch"]) -> "FeatureBatch":
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in
                     ("sketch", "numeric", "categorical", "community_strengths")))


def time_categoricals(ts: int) -> tuple[int, int]:
    """(day of week with Monday = 0, hour of day), both UTC."""
    days, secs = divmod(int(ts), DAY)
    return (days + 3) % 7, secs // 3600


class Assembler:
    """Featurises records against one store and codec."""

    def __init__(self, store: FeatureStore, codec: SketchCodec, layout: FeatureLayout | None = None):
        layout = layout or FeatureLayout.for_codec(codec)
        if layout.sketch_size != codec.params.size:
            raise ValueError(
                f"codec sketch size {codec.params.size} does not match layout ({layout.sketch_size})"
            )
        self.store = store
        self.codec = codec
        self.layout = layout
        self._lang_cap = layout.language_vocab
        self._parts = store.community_partitions

    def _numeric_and_categorical(self, rec: InteractionRecord, num: np.ndarray, cat: np.ndarray,
                                 strengths: np.ndarray) -> None:
        s = self.store
        a, b = rec.engaged_user, rec.engaging_user
        tag_counts = [0, 0, 0, 0]
        for h in set(rec.hashtags):
            c = s.hashtag_counts.get((b, h))
            if c is not None:
                for r in range(4):
                    tag_counts[r] += c[r]
        families = (
            s.pair_counts.get((a, b), ZERO),
            s.received_counts.get(a, ZERO),
            s.given_counts.get(b, ZERO),
            s.given_counts_by_language.get((b, rec.language), ZERO),
            tag_counts,
            s.similar_counts(a, b),
            s.tweet_counts.get(rec.tweet_id, ZERO),
        )
        i = 0
        for fam in families:
            num[i:i + 4] = fam
            i += 4
        ts = rec.tweet_timestamp
        num[i:] = (
            rec.engaged_follower_count,
            rec.engaged_following_count,
            rec.engaging_follower_count,
            rec.engaging_following_count,
            (ts - rec.engaged_account_created) / DAY,
            (ts - rec.engaging_account_created) / DAY,
            len(rec.hashtags),
        )
        dow, hour = time_categoricals(ts)
        m = rec.media_flags
        cat[:8] = (
            min(rec.language, self._lang_cap),
            int(rec.tweet_type),
            dow,
            hour,
            m[0] | (m[1] << 1) | (m[2] << 2) | (m[3] << 3),
            rec.engaged_verified,
            rec.engaging_verified,
            rec.engaging_follows_engaged,
        )
        for r, part in enumerate(self._parts):
            flag, strength = same_partition(part, a, b)
            cat[8 + r] = flag
            strengths[r] = strength

    def assemble(self, rec: InteractionRecord) -> AssembledFeatures:
        lay = self.layout
        num = np.empty(len(lay.numeric), dtype=np.float64)
        cat = np.empty(len(lay.categorical), dtype=np.int64)
        strengths = np.zeros(lay.n_strengths, dtype=np.float32)
        self._numeric_and_categorical(rec, num, cat, strengths)
        counts = raw_counts(self.codec, rec.tweet_tokens, oov="ignore")
        norms = np.sqrt((counts * counts).sum(axis=1, keepdims=True))
        sketch = np.divide(counts, norms, out=np.zeros(counts.shape), where=norms > 0)
        return AssembledFeatures(sketch.reshape(-1).astype(np.float32), num, cat, strengths)

    def assemble_many(self, records: Sequence[InteractionRecord]) -> FeatureBatch:
        lay = self.layout
        n = len(records)
        num = np.empty((n, len(lay.numeric)), dtype=np.float64)
        cat = np.empty((n, len(lay.categorical)), dtype=np.int64)
        strengths = np.zeros((n, lay.n_strengths), dtype=np.float32)
        for i, rec in enumerate(records):
            self._numeric_and_categorical(rec, num[i], cat[i], strengths[i])
        sketch = encode_batch(self.codec, [r.tweet_tokens for r in records], oov="ignore")
        return FeatureBatch(sketch, num, cat, strengths)


def assemble(record: InteractionRecord, store: FeatureStore, codec: SketchCodec) -> AssembledFeatures:
    return Assembler(store, codec).assemble(record)


def labels_of(records: Sequence[InteractionRecord]) -> np.ndarray:
    return np.array([r.labels for r in records], dtype=np.float64).reshape(-1, 4)
