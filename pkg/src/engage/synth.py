"""Deterministic synthetic interaction logs.

Engagement follows a logistic latent model. Each reaction type has its
own per-topic effect, so the tweet text (through its topic) carries
signal. Followers of an author get a persistent per-pair affinity, so
past same-pair interactions are predictive. Popular authors draw more
engagement. The per-reaction intercepts are solved numerically so the
expected marginal rate equals the configured prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .records import InteractionRecord, TweetType

DAY = 86400
# 2021-02-04 00:00:00 UTC
DEFAULT_START = 1612396800


@dataclass
class GeneratorConfig:
    n_users: int = 1000
    n_tweets: int = 4000
    n_rows: int = 10_000
    vocab_size: int = 2000
    embedding_dim: int = 16
    n_days: int = 22
    n_topics: int = 8
    n_languages: int = 5
    n_hashtags: int = 400
    mean_tokens: float = 12.0
    topic_token_share: float = 0.8
    embedding_noise: float = 0.5
    mean_followers: float = 15.0
    audience_fraction: float = 0.5
    like_prior: float = 0.40
    reply_prior: float = 0.06
    retweet_prior: float = 0.12
    quote_prior: float = 0.04
    topic_effect: float = 1.5
    preference_effect: float = 0.8
    pair_effect: float = 1.0
    popularity_effect: float = 0.4
    start_timestamp: int = DEFAULT_START

    @property
    def priors(self) -> tuple[float, float, float, float]:
        return (self.like_prior, self.reply_prior, self.retweet_prior, self.quote_prior)

    def validate(self) -> None:
        if self.n_users < 2:
            raise ValueError("n_users must be >= 2")
        if self.n_days < 2:
            raise ValueError("n_days must be >= 2")
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be >= 2")
        if self.n_rows < self.n_users:
            raise ValueError("n_rows must be >= n_users so every user engages at least once")
        if self.n_tweets < 1 or self.vocab_size < self.n_topics or self.n_topics < 1:
            raise ValueError("need n_tweets >= 1 and vocab_size >= n_topics >= 1")
        for p in self.priors:
            if not 0.0 < p < 1.0:
                raise ValueError("reaction priors must lie in (0, 1)")


@dataclass
class SyntheticData:
    log: list[InteractionRecord]
    followers: dict[int, frozenset]
    token_embeddings: np.ndarray
    # latent ground truth, handy for tests
    token_topics: np.ndarray = field(repr=False)
    tweet_topics: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter((self.log, self.followers, self.token_embeddings))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def calibrate_intercept(offsets: np.ndarray, prior: float, iters: int = 200) -> float:
    """Intercept c such that mean(sigmoid(c + offsets)) == prior (bisection)."""
    lo, hi = -40.0, 40.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _sigmoid(mid + offsets).mean() < prior:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _token_embeddings(rng, cfg: GeneratorConfig):
    v, d, k = cfg.vocab_size, cfg.embedding_dim, cfg.n_topics
    topics = rng.permutation(np.arange(v) % k)
    centers = rng.standard_normal((k, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    emb = centers[topics] + cfg.embedding_noise * rng.standard_normal((v, d)) / np.sqrt(d)
    return emb, topics


def _follower_sets(rng, cfg: GeneratorConfig, pref_topic, popularity):
    u = cfg.n_users
    sizes = rng.poisson(cfg.mean_followers * np.exp(0.5 * popularity))
    sizes = np.minimum(sizes, u - 1)
    pools = [np.flatnonzero(pref_topic == t) for t in range(cfg.n_topics)]
    total = int(sizes.sum())
    same = rng.random(total) < 0.7
    any_pick = rng.integers(0, u, size=total)
    pick_u = rng.random(total)
    owners = np.repeat(np.arange(u), sizes)
    followers: dict[int, frozenset] = {}
    picks = np.empty(total, dtype=np.int64)
    for t, pool in enumerate(pools):
        mask = same & (pref_topic[owners] == t)
        if len(pool):
            picks[mask] = pool[(pick_u[mask] * len(pool)).astype(np.int64)]
        else:
            picks[mask] = any_pick[mask]
    picks[~same] = any_pick[~same]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    for user in range(u):
        s = set(picks[bounds[user]:bounds[user + 1]].tolist())
        s.discard(user)
        followers[user] = frozenset(s)
    return followers


def generate_synthetic(config: GeneratorConfig, seed: int) -> SyntheticData:
    """Generate a log, follower sets and token embeddings; deterministic per seed."""
    config.validate()
    cfg = config
    rng = np.random.default_rng(seed)
    U, T = cfg.n_users, cfg.n_tweets

    # users
    pref_topic = rng.integers(0, cfg.n_topics, size=U)
    user_lang = rng.integers(0, cfg.n_languages, size=U)
    popularity = rng.standard_normal(U)
    base_followers = np.round(np.exp(5.0 + 1.5 * popularity)).astype(np.int64)
    following = np.round(np.exp(5.0 + 0.8 * rng.standard_normal(U))).astype(np.int64)
    verified = popularity > 2.0
    created = cfg.start_timestamp - rng.integers(30 * DAY, 3000 * DAY, size=U)

    followers = _follower_sets(rng, cfg, pref_topic, popularity)
    emb, token_topics = _token_embeddings(rng, cfg)
    topic_tokens = [np.flatnonzero(token_topics == t) for t in range(cfg.n_topics)]
    tags_per_topic = max(1, cfg.n_hashtags // cfg.n_topics)

    # tweets
    author_w = np.exp(0.5 * popularity)
    author = rng.choice(U, size=T, p=author_w / author_w.sum())
    own_topic = rng.random(T) < 0.6
    tweet_topic = np.where(own_topic, pref_topic[author], rng.integers(0, cfg.n_topics, size=T))
    tweet_ts = (
        cfg.start_timestamp
        + rng.integers(0, cfg.n_days, size=T) * DAY
        + rng.integers(0, DAY, size=T)
    )
    n_tok = 1 + rng.poisson(max(cfg.mean_tokens - 1.0, 0.0), size=T)
    n_tag = rng.poisson(0.7, size=T)
    media = rng.random((T, 4)) < np.array([0.2, 0.1, 0.03, 0.15])
    ttype = rng.choice(4, size=T, p=[0.6, 0.15, 0.1, 0.15])
    tokens: list[tuple[int, ...]] = []
    hashtags: list[tuple[int, ...]] = []
    for t in range(T):
        pool = topic_tokens[tweet_topic[t]]
        on_topic = rng.random(n_tok[t]) < cfg.topic_token_share
        toks = np.where(
            on_topic,
            pool[rng.integers(0, len(pool), size=n_tok[t])],
            rng.integers(0, cfg.vocab_size, size=n_tok[t]),
        )
        tokens.append(tuple(int(x) for x in toks))
        on_tag = rng.random(n_tag[t]) < 0.7
        tags = np.where(
            on_tag,
            tweet_topic[t] * tags_per_topic + rng.integers(0, tags_per_topic, size=n_tag[t]),
            rng.integers(0, cfg.n_hashtags, size=n_tag[t]),
        )
        hashtags.append(tuple(int(x) for x in tags))

    # impressions
    R = cfg.n_rows
    row_tweet = rng.integers(0, T, size=R)
    row_user = np.empty(R, dtype=np.int64)
    row_user[:U] = rng.permutation(U)
    from_audience = rng.random(R) < cfg.audience_fraction
    uniform_user = rng.integers(0, U, size=R)
    follower_pick = rng.random(R)
    fol_sorted = {u: np.array(sorted(f), dtype=np.int64) for u, f in followers.items()}
    for i in range(R):
        a = author[row_tweet[i]]
        if i < U:
            # every user engages at least once; move to another tweet if self-authored
            j = row_tweet[i]
            while author[j] == row_user[i]:
                j = (j + 1) % T
                if j == row_tweet[i]:
                    raise ValueError("cannot place a user on a tweet by someone else")
            row_tweet[i] = j
            continue
        fols = fol_sorted[a]
        if from_audience[i] and len(fols):
            row_user[i] = fols[int(follower_pick[i] * len(fols))]
        else:
            v = uniform_user[i]
            row_user[i] = v if v != a else (v + 1) % U

    row_author = author[row_tweet]
    follows = np.fromiter(
        (int(row_user[i]) in followers[int(row_author[i])] for i in range(R)), dtype=bool, count=R
    )
    pair_draw = rng.standard_normal(R)
    affinity = np.zeros(R)
    seen: dict[tuple[int, int], float] = {}
    for i in range(R):
        if follows[i]:
            key = (int(row_author[i]), int(row_user[i]))
            if key not in seen:
                seen[key] = 1.0 + pair_draw[i]
            affinity[i] = seen[key]

    topic_table = rng.standard_normal((4, cfg.n_topics))
    topic_table -= topic_table.mean(axis=1, keepdims=True)
    rtopic = tweet_topic[row_tweet]
    offsets_common = (
        cfg.preference_effect * (pref_topic[row_user] == rtopic)
        + cfg.pair_effect * affinity
        + cfg.popularity_effect * popularity[row_author]
    )
    labels = np.zeros((R, 4), dtype=bool)
    for r in range(4):
        off = offsets_common + cfg.topic_effect * topic_table[r, rtopic]
        c = calibrate_intercept(off, cfg.priors[r])
        labels[:, r] = rng.random(R) < _sigmoid(c + off)
    delays = rng.exponential(3 * 3600, size=(R, 4)).astype(np.int64)
    # reactions never fall past the end of the collection window
    window_end = cfg.start_timestamp + cfg.n_days * DAY - 1
    delays = np.minimum(delays, (window_end - tweet_ts[row_tweet])[:, None])
    jitter_a = rng.integers(0, 1 + base_followers[row_author] // 50)
    jitter_u = rng.integers(0, 1 + base_followers[row_user] // 50)

    log = []
    for i in range(R):
        t = int(row_tweet[i])
        a = int(row_author[i])
        u = int(row_user[i])
        ts = int(tweet_ts[t])
        log.append(
            InteractionRecord(
                tweet_id=t,
                engaged_user=a,
                engaging_user=u,
                tweet_tokens=tokens[t],
                hashtags=hashtags[t],
                language=int(user_lang[a]),
                media_flags=tuple(bool(x) for x in media[t]),
                tweet_type=TweetType(int(ttype[t])),
                tweet_timestamp=ts,
                reaction_timestamps=tuple(
                    ts + int(delays[i, r]) if labels[i, r] else None for r in range(4)
                ),
                engaged_follower_count=int(base_followers[a] + jitter_a[i]),
                engaged_following_count=int(following[a]),
                engaging_follower_count=int(base_followers[u] + jitter_u[i]),
                engaging_following_count=int(following[u]),
                engaged_verified=bool(verified[a]),
                engaging_verified=bool(verified[u]),
                engaging_follows_engaged=bool(follows[i]),
                engaged_account_created=int(created[a]),
                engaging_account_created=int(created[u]),
            )
        )
    order = sorted(range(R), key=lambda i: log[i].tweet_timestamp)
    log = [log[i] for i in order]
    return SyntheticData(log, followers, emb, token_topics, tweet_topic)

