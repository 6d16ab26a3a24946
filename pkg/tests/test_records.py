import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from engage.records import (
    LOG_COLUMNS,
    LogFormatError,
    TweetType,
    format_record,
    load_log,
    parse_record,
    read_embeddings,
    read_followers,
    read_log_meta,
    write_embeddings,
    write_followers,
    write_log,
)

from conftest import make_record, with_labels

ts = st.integers(min_value=0, max_value=2**40)
ids = st.integers(min_value=0, max_value=2**63 - 1)
small = st.integers(min_value=0, max_value=10**9)


@st.composite
def records(draw):
    t = draw(ts)
    reactions = tuple(draw(st.one_of(st.none(), st.integers(t, t + 10**6))) for _ in range(4))
    return make_record(
        tweet_id=draw(ids),
        engaged_user=draw(ids),
        engaging_user=draw(ids),
        tweet_tokens=tuple(draw(st.lists(small, max_size=8))),
        hashtags=tuple(draw(st.lists(small, max_size=3))),
        language=draw(st.integers(0, 200)),
        media_flags=tuple(draw(st.lists(st.booleans(), min_size=4, max_size=4))),
        tweet_type=draw(st.sampled_from(list(TweetType))),
        tweet_timestamp=t,
        reaction_timestamps=reactions,
        engaged_follower_count=draw(small),
        engaged_following_count=draw(small),
        engaging_follower_count=draw(small),
        engaging_following_count=draw(small),
        engaged_verified=draw(st.booleans()),
        engaging_verified=draw(st.booleans()),
        engaging_follows_engaged=draw(st.booleans()),
        engaged_account_created=draw(st.integers(0, t)),
        engaging_account_created=draw(st.integers(0, t)),
    )


class TestRecord:
    def test_labels_and_positive(self):
        rec = with_labels(make_record(), (1, 0, 0, 1))
        assert rec.labels == (1, 0, 0, 1)
        assert rec.is_positive
        assert not make_record().is_positive

    def test_validate_self_engagement(self):
        with pytest.raises(ValueError, match="engaged_user"):
            make_record(engaging_user=10).validate()

    def test_validate_reaction_before_tweet(self):
        rec = make_record(reaction_timestamps=(0, None, None, None))
        with pytest.raises(ValueError, match="precedes"):
            rec.validate()

    def test_tweet_type_labels_round_trip(self):
        for t in TweetType:
            assert TweetType.parse(t.label) is t
        with pytest.raises(ValueError):
            TweetType.parse("nonsense")


class TestLogFormat:
    @given(records())
    @settings(max_examples=200)
    def test_round_trip(self, rec):
        assert parse_record(format_record(rec)) == rec

    def test_line_has_all_columns(self):
        assert len(format_record(make_record()).split("\t")) == len(LOG_COLUMNS) == 22

    def test_empty_reaction_columns(self):
        f = format_record(with_labels(make_record(), (0, 1, 0, 0))).split("\t")
        assert f[9:13] == ["", str(make_record().tweet_timestamp + 60), "", ""]

    @pytest.mark.parametrize("col,bad", [(0, "x"), (6, "012"), (6, "1"), (17, "2"), (0, "-1")])
    def test_malformed_field(self, col, bad):
        f = format_record(make_record()).split("\t")
        f[col] = bad
        with pytest.raises(ValueError):
            parse_record("\t".join(f))

    def test_file_round_trip_and_meta(self, tmp_path):
        recs = [make_record(tweet_id=i) for i in range(5)]
        p = tmp_path / "log.tsv"
        assert write_log(p, recs, meta="abc {}") == 5
        assert load_log(p) == recs
        assert read_log_meta(p) == "abc {}"

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_log(tmp_path / "nope.tsv")

    def test_empty_file_is_empty_log(self, tmp_path):
        p = tmp_path / "e.tsv"
        p.write_text("")
        assert load_log(p) == []

    def test_truncated_file(self, tmp_path):
        p = tmp_path / "log.tsv"
        write_log(p, [make_record(tweet_id=i) for i in range(3)])
        lines = p.read_text().splitlines(keepends=True)
        p.write_text("".join(lines[:-1]))
        with pytest.raises(LogFormatError, match="footer"):
            load_log(p)

    def test_count_mismatch(self, tmp_path):
        p = tmp_path / "log.tsv"
        write_log(p, [make_record()])
        p.write_text(p.read_text().replace("#count 1", "#count 2"))
        with pytest.raises(LogFormatError, match="declares 2"):
            load_log(p)

    def test_error_carries_line_number(self, tmp_path):
        p = tmp_path / "log.tsv"
        write_log(p, [make_record(tweet_id=i) for i in range(3)])
        lines = p.read_text().splitlines(keepends=True)
        lines[2] = "garbage\n"
        p.write_text("".join(lines))
        with pytest.raises(LogFormatError) as err:
            load_log(p)
        assert err.value.line == 3

    def test_bad_header(self, tmp_path):
        p = tmp_path / "log.tsv"
        p.write_text("#other v9\n#count 0\n")
        with pytest.raises(LogFormatError, match="header"):
            load_log(p)


class TestSideFiles:
    def test_followers_round_trip(self, tmp_path):
        fol = {1: frozenset({2, 3}), 2: frozenset(), 5: frozenset({1})}
        p = tmp_path / "f.tsv"
        write_followers(p, fol)
        assert read_followers(p) == fol

    def test_self_follow_rejected(self, tmp_path):
        p = tmp_path / "f.tsv"
        p.write_text("#followers v1\n1\t1,2\n")
        with pytest.raises(LogFormatError, match="follows itself"):
            read_followers(p)

    def test_embeddings_exact_round_trip(self, tmp_path):
        emb = np.random.default_rng(0).normal(size=(7, 3))
        p = tmp_path / "e.txt"
        write_embeddings(p, emb)
        assert np.array_equal(read_embeddings(p), emb)

    def test_embeddings_short_row(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("#emb v1 1 2\n0.5\n")
        with pytest.raises(LogFormatError):
            read_embeddings(p)


def test_records_are_immutable():
    rec = make_record()
    with pytest.raises(dataclasses.FrozenInstanceError):
        rec.language = 3
