"""Multi-scale sin/cos encoding of scalar features.

A value ``x`` is divided by ``2**s`` for every scale exponent ``s`` and
fed through sine and cosine. All sines come first, then all cosines, so
the default eight scales give a 16-wide vector with every component in
[-1, 1]. No normalisation statistics are needed.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

DEFAULT_SCALES = (-1, 0, 1, 2, 3, 4, 5, 6)
# beyond this x / 2**s is no longer exact for every scale
MAX_ABS_INPUT = float(2**53)


def check_scales(scales: Sequence[int]) -> tuple[int, ...]:
    scales = tuple(int(s) for s in scales)
    if not scales:
        raise ValueError("scales must be non-empty")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError(f"scales must be strictly increasing, got {scales}")
    return scales


def encoded_width(scales: Sequence[int] = DEFAULT_SCALES) -> int:
    return 2 * len(scales)


def _divisors(scales: tuple[int, ...]) -> np.ndarray:
    return np.array([2.0**s for s in scales])


def encode_column(xs, scales: Sequence[int] = DEFAULT_SCALES, log1p: bool = False) -> np.ndarray:
    """Encode a column of scalars into an ``(n, 2 * len(scales))`` matrix.

    Row ``i`` is ``encode_scalar(xs[i])``. With ``log1p=True`` the values
    are first mapped through ``sign(x) * log1p(|x|)``.
    """
    scales = check_scales(scales)
    x = np.asarray(xs, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot encode non-finite values")
    if log1p:
        x = np.sign(x) * np.log1p(np.abs(x))
    x = np.clip(x, -MAX_ABS_INPUT, MAX_ABS_INPUT)
    z = x[:, None] / _divisors(scales)[None, :]
    return np.hstack([np.sin(z), np.cos(z)])


def encode_scalar(x: float, scales: Sequence[int] = DEFAULT_SCALES, log1p: bool = False) -> np.ndarray:
    return encode_column([x], scales, log1p)[0]


def encode_matrix(values: np.ndarray, scales: Sequence[int] = DEFAULT_SCALES, log1p: bool = False,
                  out: np.ndarray | None = None) -> np.ndarray:
    """Encode every column of an ``(n, f)`` matrix.

    The result is ``(n, f * 2 * len(scales))``; the block for feature
    ``j`` is ``encode_column(values[:, j])``.
    """
    scales = check_scales(scales)
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot encode non-finite values")
    if log1p:
        v = np.sign(v) * np.log1p(np.abs(v))
    v = np.clip(v, -MAX_ABS_INPUT, MAX_ABS_INPUT)
    n, f = v.shape
    s = len(scales)
    z = v[:, :, None] / _divisors(scales)[None, None, :]
    if out is None:
        out = np.empty((n, f, 2 * s), dtype=np.float64)
    else:
        out = out.reshape(n, f, 2 * s)
    np.sin(z, out=out[:, :, :s])
    np.cos(z, out=out[:, :, s:])
    return out.reshape(n, f * 2 * s)
