import dataclasses

import pytest
from hypothesis import settings

from engage.records import InteractionRecord, TweetType
from engage.sketch import SketchParams, fit_codec
from engage.synth import GeneratorConfig, generate_synthetic

# timing varies too much on shared single-core machines for per-example deadlines
settings.register_profile("default", deadline=None)
settings.load_profile("default")

T0 = 1612396800  # 2021-02-04 00:00 UTC, a Thursday


def make_record(**overrides) -> InteractionRecord:
    base = dict(
        tweet_id=1,
        engaged_user=10,
        engaging_user=20,
        tweet_tokens=(1, 2, 3),
        hashtags=(),
        language=0,
        media_flags=(False, False, False, False),
        tweet_type=TweetType.TOP_LEVEL,
        tweet_timestamp=T0 + 3600,
        reaction_timestamps=(None, None, None, None),
        engaged_follower_count=5,
        engaged_following_count=6,
        engaging_follower_count=7,
        engaging_following_count=8,
        engaged_verified=False,
        engaging_verified=False,
        engaging_follows_engaged=False,
        engaged_account_created=T0 - 86400,
        engaging_account_created=T0 - 2 * 86400,
    )
    base.update(overrides)
    return InteractionRecord(**base)


def with_labels(rec: InteractionRecord, labels) -> InteractionRecord:
    ts = tuple(rec.tweet_timestamp + 60 if y else None for y in labels)
    return dataclasses.replace(rec, reaction_timestamps=ts)


SMALL = GeneratorConfig(n_users=120, n_tweets=400, n_rows=1500, vocab_size=300, n_days=4, n_hashtags=40)


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(SMALL, seed=3)


@pytest.fixture(scope="session")
def small_codec(small_data):
    return fit_codec(small_data.token_embeddings, SketchParams(depth=4, width=16, embedding_dim=16, seed=0))


# -- acceptance summary ---------------------------------------------------------

_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for a criterion; the test should still assert."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
