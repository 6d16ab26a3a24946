"""Interaction-log schema and the tab-separated on-disk formats.

A log file looks like::

    #engage-log v1
    #config <hash> <json>          (optional)
    <22 tab-separated fields>      (one line per record)
    #count <n>

Field order is ``LOG_COLUMNS``. Token and hashtag sequences are
comma-separated, booleans are ``0``/``1``, the media flags field is a
4-character bit string (photo, video, gif, link) and an absent reaction
timestamp is an empty field.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

REACTIONS = ("like", "reply", "retweet", "quote")
MEDIA_KINDS = ("photo", "video", "gif", "link")

LOG_HEADER = "#engage-log v1"
FOLLOWERS_HEADER = "#followers v1"
EMB_HEADER = "#emb v1"

LOG_COLUMNS = (
    "tweet_id",
    "engaged_user",
    "engaging_user",
    "tweet_tokens",
    "hashtags",
    "language",
    "media_flags",
    "tweet_type",
    "tweet_timestamp",
    "like_timestamp",
    "reply_timestamp",
    "retweet_timestamp",
    "quote_timestamp",
    "engaged_follower_count",
    "engaged_following_count",
    "engaging_follower_count",
    "engaging_following_count",
    "engaged_verified",
    "engaging_verified",
    "engaging_follows_engaged",
    "engaged_account_created",
    "engaging_account_created",
)


class LogFormatError(ValueError):
    """A file does not conform to its declared text format."""

    def __init__(self, message: str, path: str | os.PathLike | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class TweetType(enum.IntEnum):
    TOP_LEVEL = 0
    RETWEET = 1
    QUOTE = 2
    REPLY = 3

    @property
    def label(self) -> str:
        return _TWEET_TYPE_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "TweetType":
        try:
            return _TWEET_TYPE_BY_LABEL[text]
        except KeyError:
            raise ValueError(f"unknown tweet type {text!r}") from None


_TWEET_TYPE_LABELS = {
    TweetType.TOP_LEVEL: "top-level",
    TweetType.RETWEET: "retweet",
    TweetType.QUOTE: "quote",
    TweetType.REPLY: "reply-thread",
}
_TWEET_TYPE_BY_LABEL = {v: k for k, v in _TWEET_TYPE_LABELS.items()}


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    """One impression of a tweet on a potential reactor.

    ``reaction_timestamps`` is ordered like ``REACTIONS``; ``None`` means
    the engaging user did not react that way.
    """

    tweet_id: int
    engaged_user: int
    engaging_user: int
    tweet_tokens: tuple[int, ...]
    hashtags: tuple[int, ...]
    language: int
    media_flags: tuple[bool, bool, bool, bool]
    tweet_type: TweetType
    tweet_timestamp: int
    reaction_timestamps: tuple[Optional[int], Optional[int], Optional[int], Optional[int]]
    engaged_follower_count: int
    engaged_following_count: int
    engaging_follower_count: int
    engaging_following_count: int
    engaged_verified: bool
    engaging_verified: bool
    engaging_follows_engaged: bool
    engaged_account_created: int
    engaging_account_created: int

    @property
    def is_positive(self) -> bool:
        return any(t is not None for t in self.reaction_timestamps)

    @property
    def labels(self) -> tuple[int, int, int, int]:
        return tuple(int(t is not None) for t in self.reaction_timestamps)  # type: ignore[return-value]

    def validate(self) -> None:
        """Raise ``ValueError`` if a record-level invariant is violated."""
        if self.engaged_user == self.engaging_user:
            raise ValueError("engaged_user equals engaging_user")
        for name, t in zip(REACTIONS, self.reaction_timestamps):
            if t is not None and t < self.tweet_timestamp:
                raise ValueError(f"{name} timestamp precedes tweet timestamp")
        for name in (
            "engaged_follower_count",
            "engaged_following_count",
            "engaging_follower_count",
            "engaging_following_count",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} is negative")
        if self.engaged_account_created > self.tweet_timestamp:
            raise ValueError("engaged account created after the tweet")
        if self.engaging_account_created > self.tweet_timestamp:
            raise ValueError("engaging account created after the tweet")


# map from user id to the set of users following that user
FollowerSets = Mapping[int, frozenset]


# -- log format ---------------------------------------------------------------


def _ints(seq: Sequence[int]) -> str:
    return ",".join(str(int(v)) for v in seq)


def _bit(b: bool) -> str:
    return "1" if b else "0"


def format_record(rec: InteractionRecord) -> str:
    fields = [
        str(rec.tweet_id),
        str(rec.engaged_user),
        str(rec.engaging_user),
        _ints(rec.tweet_tokens),
        _ints(rec.hashtags),
        str(rec.language),
        "".join(_bit(f) for f in rec.media_flags),
        rec.tweet_type.label,
        str(rec.tweet_timestamp),
        *("" if t is None else str(t) for t in rec.reaction_timestamps),
        str(rec.engaged_follower_count),
        str(rec.engaged_following_count),
        str(rec.engaging_follower_count),
        str(rec.engaging_following_count),
        _bit(rec.engaged_verified),
        _bit(rec.engaging_verified),
        _bit(rec.engaging_follows_engaged),
        str(rec.engaged_account_created),
        str(rec.engaging_account_created),
    ]
    return "\t".join(fields)


def _parse_int(text: str, column: str, lo: int = -(2**63), hi: int = 2**64 - 1) -> int:
    try:
        v = int(text)
    except ValueError:
        raise ValueError(f"column {column}: expected integer, got {text!r}") from None
    if not lo <= v <= hi:
        raise ValueError(f"column {column}: value {v} out of range")
    return v


def _parse_seq(text: str, column: str) -> tuple[int, ...]:
    if text == "":
        return ()
    return tuple(_parse_int(t, column, lo=0) for t in text.split(","))


def _parse_bool(text: str, column: str) -> bool:
    if text == "1":
        return True
    if text == "0":
        return False
    raise ValueError(f"column {column}: expected 0 or 1, got {text!r}")


def _parse_opt_ts(text: str, column: str) -> Optional[int]:
    return None if text == "" else _parse_int(text, column)


def parse_record(line: str) -> InteractionRecord:
    """Parse one data line; raises ``ValueError`` describing the bad column."""
    f = line.rstrip("\n").split("\t")
    if len(f) != len(LOG_COLUMNS):
        raise ValueError(f"expected {len(LOG_COLUMNS)} fields, got {len(f)}")
    media = f[6]
    if len(media) != 4 or any(c not in "01" for c in media):
        raise ValueError(f"column media_flags: expected 4 bits, got {media!r}")
    return InteractionRecord(
        tweet_id=_parse_int(f[0], "tweet_id", lo=0),
        engaged_user=_parse_int(f[1], "engaged_user", lo=0),
        engaging_user=_parse_int(f[2], "engaging_user", lo=0),
        tweet_tokens=_parse_seq(f[3], "tweet_tokens"),
        hashtags=_parse_seq(f[4], "hashtags"),
        language=_parse_int(f[5], "language", lo=0),
        media_flags=tuple(c == "1" for c in media),  # type: ignore[arg-type]
        tweet_type=TweetType.parse(f[7]),
        tweet_timestamp=_parse_int(f[8], "tweet_timestamp"),
        reaction_timestamps=tuple(  # type: ignore[arg-type]
            _parse_opt_ts(f[9 + i], LOG_COLUMNS[9 + i]) for i in range(4)
        ),
        engaged_follower_count=_parse_int(f[13], "engaged_follower_count", lo=0),
        engaged_following_count=_parse_int(f[14], "engaged_following_count", lo=0),
        engaging_follower_count=_parse_int(f[15], "engaging_follower_count", lo=0),
        engaging_following_count=_parse_int(f[16], "engaging_following_count", lo=0),
        engaged_verified=_parse_bool(f[17], "engaged_verified"),
        engaging_verified=_parse_bool(f[18], "engaging_verified"),
        engaging_follows_engaged=_parse_bool(f[19], "engaging_follows_engaged"),
        engaged_account_created=_parse_int(f[20], "engaged_account_created"),
        engaging_account_created=_parse_int(f[21], "engaging_account_created"),
    )


def write_log(path, records: Iterable[InteractionRecord], meta: Optional[str] = None) -> int:
    """Write records to ``path``; returns the record count.

    ``meta`` is written verbatim as a ``#config`` line after the header.
    """
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(LOG_HEADER + "\n")
        if meta is not None:
            fh.write(f"#config {meta}\n")
        for rec in records:
            fh.write(format_record(rec))
            fh.write("\n")
            n += 1
        fh.write(f"#count {n}\n")
    return n


def read_log_meta(path) -> Optional[str]:
    """Return the ``#config`` payload of a log file, if any."""
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        line = fh.readline()
    if line.startswith("#config "):
        return line[len("#config "):].rstrip("\n")
    return None


def read_log(path) -> Iterator[InteractionRecord]:
    """Yield records in file order.

    An empty file is an empty log. Anything else must start with the
    header and end with a ``#count`` footer matching the number of rows;
    a missing footer means the file was truncated.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"log file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if first == "":
            return
        if first.rstrip("\n") != LOG_HEADER:
            raise LogFormatError(f"bad header {first.rstrip()!r}", path, 1)
        n = 0
        footer = None
        for lineno, line in enumerate(fh, start=2):
            if footer is not None:
                raise LogFormatError("data after #count footer", path, lineno)
            if line.startswith("#"):
                if line.startswith("#count "):
                    footer = (lineno, line)
                elif line.startswith("#config ") and n == 0:
                    pass
                else:
                    raise LogFormatError(f"unexpected directive {line.rstrip()!r}", path, lineno)
                continue
            try:
                rec = parse_record(line)
            except ValueError as exc:
                raise LogFormatError(str(exc), path, lineno) from None
            n += 1
            yield rec
        if footer is None:
            raise LogFormatError("missing #count footer (truncated file?)", path)
        lineno, line = footer
        try:
            declared = int(line.split()[1])
        except (IndexError, ValueError):
            raise LogFormatError(f"bad footer {line.rstrip()!r}", path, lineno) from None
        if declared != n:
            raise LogFormatError(f"footer declares {declared} records, found {n}", path, lineno)


def load_log(path) -> list[InteractionRecord]:
    return list(read_log(path))


# -- followers / embeddings ---------------------------------------------------


def write_followers(path, followers: FollowerSets) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FOLLOWERS_HEADER + "\n")
        for user in sorted(followers):
            fh.write(f"{user}\t{_ints(sorted(followers[user]))}\n")


def read_followers(path) -> dict[int, frozenset]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"follower file not found: {path}")
    out: dict[int, frozenset] = {}
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != FOLLOWERS_HEADER:
            raise LogFormatError(f"bad header {first!r}", path, 1)
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise LogFormatError("expected user<TAB>followers", path, lineno)
            try:
                user = _parse_int(parts[0], "user", lo=0)
                fol = frozenset(_parse_seq(parts[1], "followers"))
            except ValueError as exc:
                raise LogFormatError(str(exc), path, lineno) from None
            if user in fol:
                raise LogFormatError(f"user {user} follows itself", path, lineno)
            out[user] = fol
    return out


def write_embeddings(path, emb: np.ndarray) -> None:
    """Write a V x D matrix using shortest round-trip decimal text."""
    emb = np.asarray(emb, dtype=np.float64)
    v, d = emb.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{EMB_HEADER} {v} {d}\n")
        for row in emb:
            fh.write(" ".join(repr(float(x)) for x in row))
            fh.write("\n")


def read_embeddings(path) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(f"embedding file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 4 or " ".join(head[:2]) != EMB_HEADER:
            raise LogFormatError(f"bad header {' '.join(head)!r}", path, 1)
        v, d = int(head[2]), int(head[3])
        out = np.empty((v, d), dtype=np.float64)
        i = 0
        for lineno, line in enumerate(fh, start=2):
            vals = line.split()
            if len(vals) != d:
                raise LogFormatError(f"expected {d} values, got {len(vals)}", path, lineno)
            if i >= v:
                raise LogFormatError(f"more than {v} rows", path, lineno)
            try:
                out[i] = [float(x) for x in vals]
            except ValueError as exc:
                raise LogFormatError(str(exc), path, lineno) from None
            i += 1
        if i != v:
            raise LogFormatError(f"expected {v} rows, found {i}", path)
    return out
