"""Token sketches over density-aware random-hyperplane partitionings.

A codec holds ``depth`` independent partitionings of the token embedding
space. Each partitioning cuts the space with ``log2(width)`` hyperplanes;
a hyperplane's offset is the projection of a randomly chosen token, so
cuts land where the data is. The sign bits of a token's projections form
its region id at that depth.

A tweet's sketch is the per-depth histogram of its tokens' regions,
with each depth row L2-normalised. Histograms add: the counts of a
concatenation are the sum of the counts of its parts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .records import LogFormatError

CODEC_HEADER = "#sketch-codec v1"


@dataclass(frozen=True)
class SketchParams:
    depth: int = 16
    width: int = 64
    embedding_dim: int = 16
    seed: int = 0
    # False draws offsets uniformly over the projected range instead
    density_aware: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.width < 2 or self.width & (self.width - 1):
            raise ValueError(f"width must be a power of two >= 2, got {self.width}")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")

    @property
    def bits(self) -> int:
        return self.width.bit_length() - 1

    @property
    def size(self) -> int:
        return self.depth * self.width


@dataclass(frozen=True, eq=False)
class SketchCodec:
    params: SketchParams
    # (depth, bits, D) projection directions and (depth, bits) offsets
    directions: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    # (V, depth) region ids
    assignments: np.ndarray = field(repr=False)

    @property
    def vocab_size(self) -> int:
        return self.assignments.shape[0]

    def region_ids(self, embeddings: np.ndarray) -> np.ndarray:
        """Region id of each embedding row at each depth, shape ``(n, depth)``."""
        return _assign(np.asarray(embeddings, dtype=np.float64), self.directions, self.offsets)

    def __eq__(self, other):
        if not isinstance(other, SketchCodec):
            return NotImplemented
        return (
            self.params == other.params
            and np.array_equal(self.directions, other.directions)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.assignments, other.assignments)
        )


def _assign(emb: np.ndarray, directions: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    # proj[n, k, b] = emb[n] . directions[k, b]
    proj = np.einsum("nd,kbd->nkb", emb, directions)
    bits = proj > offsets[None, :, :]
    weights = 1 << np.arange(directions.shape[1])
    return (bits * weights).sum(axis=2).astype(np.int64)


def fit_codec(embeddings: np.ndarray, params: SketchParams) -> SketchCodec:
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise ValueError("embeddings must be a V x D matrix")
    v, d = emb.shape
    if d != params.embedding_dim:
        raise ValueError(f"embedding dim {d} does not match params ({params.embedding_dim})")
    if v < params.width:
        raise ValueError(f"need at least width={params.width} tokens, got {v}")
    if not np.all(np.isfinite(emb)):
        raise ValueError("embeddings contain non-finite values")

    rng = np.random.default_rng(params.seed)
    k, b = params.depth, params.bits
    directions = rng.standard_normal((k, b, d))
    offsets = np.empty((k, b))
    for i in range(k):
        proj = emb @ directions[i].T  # (V, b)
        if params.density_aware:
            picks = rng.integers(0, v, size=b)
            offsets[i] = proj[picks, np.arange(b)]
        else:
            lo, hi = proj.min(axis=0), proj.max(axis=0)
            offsets[i] = lo + rng.random(b) * (hi - lo)
    assignments = _assign(emb, directions, offsets)
    return SketchCodec(params, directions, offsets, assignments)


@dataclass(frozen=True)
class Sketch:
    """Row-major ``depth x width`` values."""

    values: np.ndarray
    depth: int
    width: int

    def matrix(self) -> np.ndarray:
        return self.values.reshape(self.depth, self.width)


def _token_array(codec: SketchCodec, tokens: Sequence[int], oov: str) -> np.ndarray:
    t = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if t.size and t.min() < 0:
        raise ValueError("negative token id")
    if t.size and t.max() >= codec.vocab_size:
        if oov == "error":
            raise ValueError(f"token id {int(t.max())} out of range (vocab {codec.vocab_size})")
        t = t[t < codec.vocab_size]
    return t


def raw_counts(codec: SketchCodec, tokens: Sequence[int], oov: str = "error") -> np.ndarray:
    """Un-normalised ``(depth, width)`` region counts of a token sequence.

    ``oov="ignore"`` drops token ids beyond the vocabulary (they contribute
    nothing); the default raises.
    """
    t = _token_array(codec, tokens, oov)
    k, w = codec.params.depth, codec.params.width
    flat = codec.assignments[t] + (np.arange(k) * w)[None, :]
    return np.bincount(flat.ravel(), minlength=k * w).reshape(k, w)


def normalize_rows(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    norms = np.sqrt((counts * counts).sum(axis=-1, keepdims=True))
    return np.divide(counts, norms, out=np.zeros_like(counts), where=norms > 0)


def encode_tokens(codec: SketchCodec, tokens: Sequence[int], oov: str = "error") -> Sketch:
    counts = raw_counts(codec, tokens, oov)
    k, w = counts.shape
    return Sketch(normalize_rows(counts).reshape(-1), k, w)


def encode_batch(codec: SketchCodec, token_lists: Sequence[Sequence[int]], oov: str = "ignore",
                 dtype=np.float32) -> np.ndarray:
    """Normalised sketches for many token lists, shape ``(n, depth * width)``."""
    k, w = codec.params.depth, codec.params.width
    n = len(token_lists)
    lengths = np.fromiter((len(t) for t in token_lists), dtype=np.int64, count=n)
    flat_tokens = np.fromiter((x for t in token_lists for x in t), dtype=np.int64, count=int(lengths.sum()))
    rows = np.repeat(np.arange(n), lengths)
    if flat_tokens.size and flat_tokens.min() < 0:
        raise ValueError("negative token id")
    keep = flat_tokens < codec.vocab_size
    if oov == "error" and not keep.all():
        raise ValueError("token id out of range")
    rows, flat_tokens = rows[keep], flat_tokens[keep]
    idx = rows[:, None] * (k * w) + codec.assignments[flat_tokens] + (np.arange(k) * w)[None, :]
    counts = np.bincount(idx.ravel(), minlength=n * k * w).reshape(n, k, w)
    return normalize_rows(counts).reshape(n, k * w).astype(dtype)


# -- serialization ------------------------------------------------------------


def save_codec(path, codec: SketchCodec, meta: str | None = None) -> None:
    p = codec.params
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{CODEC_HEADER} {p.depth} {p.width} {p.embedding_dim} {p.seed}\n")
        if meta is not None:
            fh.write(f"#config {meta}\n")
        fh.write(f"#offsets {'quantile' if p.density_aware else 'uniform'}\n")
        for i in range(p.depth):
            for j in range(p.bits):
                vals = list(codec.directions[i, j]) + [codec.offsets[i, j]]
                fh.write(" ".join(repr(float(x)) for x in vals))
                fh.write("\n")
        fh.write(f"#assignments {codec.vocab_size}\n")
        for row in codec.assignments:
            fh.write(" ".join(str(int(x)) for x in row))
            fh.write("\n")


def load_codec(path) -> SketchCodec:
    if not os.path.exists(path):
        raise FileNotFoundError(f"codec file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    head = lines[0].split()
    if len(head) != 6 or " ".join(head[:2]) != CODEC_HEADER:
        raise LogFormatError(f"bad header {lines[0]!r}", path, 1)
    k, w, d, seed = (int(x) for x in head[2:])
    i = 1
    if lines[i].startswith("#config "):
        i += 1
    mode = lines[i].split()
    if mode[:1] != ["#offsets"] or mode[1] not in ("quantile", "uniform"):
        raise LogFormatError(f"bad offsets line {lines[i]!r}", path, i + 1)
    params = SketchParams(k, w, d, seed, density_aware=mode[1] == "quantile")
    i += 1
    b = params.bits
    directions = np.empty((k, b, d))
    offsets = np.empty((k, b))
    for a in range(k):
        for c in range(b):
            vals = lines[i].split()
            if len(vals) != d + 1:
                raise LogFormatError(f"expected {d + 1} values", path, i + 1)
            nums = [float(x) for x in vals]
            directions[a, c] = nums[:d]
            offsets[a, c] = nums[d]
            i += 1
    tag = lines[i].split()
    if tag[:1] != ["#assignments"]:
        raise LogFormatError("missing #assignments section", path, i + 1)
    v = int(tag[1])
    i += 1
    try:
        assignments = np.array([[int(x) for x in lines[i + r].split()] for r in range(v)], dtype=np.int64)
    except (ValueError, IndexError):
        raise LogFormatError("truncated or malformed assignment table", path) from None
    if assignments.shape != (v, k) or assignments.min(initial=0) < 0 or assignments.max(initial=0) >= w:
        raise LogFormatError("assignment table has wrong shape or out-of-range ids", path)
    return SketchCodec(params, directions, offsets, assignments.reshape(v, k))
