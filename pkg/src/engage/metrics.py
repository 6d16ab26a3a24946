"""Average precision, relative cross-entropy and popularity-grouped evaluation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .records import REACTIONS

EPS = 1e-7


def average_precision(scores, labels) -> Optional[float]:
    """Mean of precision@k over the ranks k of the positives.

    Rows are ranked by descending score; equal scores keep input order.
    Returns ``None`` when there are no positives.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, n_pos + 1) / ranks
    return float(precision.sum() / n_pos)


def cross_entropy(scores, labels) -> float:
    p = np.clip(np.asarray(scores, dtype=np.float64).reshape(-1), EPS, 1.0 - EPS)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    terms = np.where(y > 0.5, -np.log(p), -np.log1p(-p))
    # exactly rounded sum: RCE is a ratio of two such means
    return math.fsum(terms.tolist()) / max(len(terms), 1)


def rce(scores, labels) -> float:
    """100 * (1 - CE(model) / CE(positive-rate prior))."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    rate = y.mean() if y.size else 0.0
    if y.size == 0 or rate in (0.0, 1.0):
        raise ValueError("RCE needs both positive and negative labels")
    ce_model = cross_entropy(scores, y)
    ce_prior = cross_entropy(np.full_like(y, rate), y)
    return 100.0 * (1.0 - ce_model / ce_prior)


def _rce_or_none(scores, labels) -> Optional[float]:
    try:
        return rce(scores, labels)
    except ValueError:
        return None


def quantile_groups(values, n_groups: int) -> np.ndarray:
    """Group index per row: rows sorted by value and cut into equal-size runs.

    Sizes differ by at most one; earlier groups take the extra rows. Equal
    values are ordered by row index, so a tie straddling a cut sends its
    first rows to the lower group.
    """
    if n_groups < 1:
        raise ValueError("need at least one group")
    v = np.asarray(values).reshape(-1)
    order = np.argsort(v, kind="stable")
    groups = np.empty(len(v), dtype=np.int64)
    for g, idx in enumerate(np.array_split(order, n_groups)):
        groups[idx] = g
    return groups


def _mean(vals: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in vals if v is not None]
    return float(sum(present) / len(present)) if present else None


@dataclass
class ReactionReport:
    ap: Optional[float]
    rce: Optional[float]
    group_ap: list[Optional[float]]
    group_rce: list[Optional[float]]
    group_sizes: list[int]
    language_ap: dict[int, Optional[float]] = field(default_factory=dict)
    language_sizes: dict[int, int] = field(default_factory=dict)

    @property
    def mean_ap(self) -> Optional[float]:
        return _mean(self.group_ap)

    @property
    def mean_rce(self) -> Optional[float]:
        return _mean(self.group_rce)


@dataclass
class EvalReport:
    n_groups: int
    reactions: dict[str, ReactionReport]

    def lines(self) -> list[str]:
        """``metric<TAB>reaction<TAB>group<TAB>value`` rows; absent values print ``NA``."""
        out = []

        def put(metric, reaction, group, value):
            out.append(f"{metric}\t{reaction}\t{group}\t{_fmt(value)}")

        for name, rep in self.reactions.items():
            put("AP", name, "all", rep.ap)
            put("RCE", name, "all", rep.rce)
            for g in range(self.n_groups):
                put("AP", name, f"g{g}", rep.group_ap[g])
                put("RCE", name, f"g{g}", rep.group_rce[g])
            put("AP", name, "mean", rep.mean_ap)
            put("RCE", name, "mean", rep.mean_rce)
            for lang in sorted(rep.language_ap):
                put("AP", name, f"lang{lang}", rep.language_ap[lang])
        return out

    def table(self) -> str:
        head = f"{'reaction':<9} {'AP':>8} {'RCE':>9} {'AP mean':>8} {'RCE mean':>9}"
        rows = [head, "-" * len(head)]
        for name, rep in self.reactions.items():
            rows.append(
                f"{name:<9} {_fmt(rep.ap, 4):>8} {_fmt(rep.rce, 3):>9} "
                f"{_fmt(rep.mean_ap, 4):>8} {_fmt(rep.mean_rce, 3):>9}"
            )
        rows.append(f"(means over {self.n_groups} author-popularity groups)")
        return "\n".join(rows)


def _fmt(v: Optional[float], digits: int = 10) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return f"{v:.{digits}f}"


def grouped_eval(follower_counts, predictions, labels, n_groups: int = 5,
                 languages=None) -> EvalReport:
    """Score each reaction overall and per popularity group.

    Rows are grouped by quantiles of the author's follower count. A group
    without positives (or without negatives, for RCE) has no score and is
    left out of the group mean.
    """
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1, len(REACTIONS))
    y = np.asarray(labels, dtype=np.float64).reshape(-1, len(REACTIONS))
    groups = quantile_groups(follower_counts, n_groups)
    lang = None if languages is None else np.asarray(languages).reshape(-1)
    reports = {}
    for r, name in enumerate(REACTIONS):
        s, t = pred[:, r], y[:, r]
        g_ap, g_rce, sizes = [], [], []
        for g in range(n_groups):
            m = groups == g
            sizes.append(int(m.sum()))
            ap = average_precision(s[m], t[m])
            if ap is None:
                warnings.warn(f"{name}: group {g} has no positives; excluded from the mean")
            g_ap.append(ap)
            g_rce.append(_rce_or_none(s[m], t[m]))
        rep = ReactionReport(average_precision(s, t), _rce_or_none(s, t), g_ap, g_rce, sizes)
        if lang is not None:
            for code in np.unique(lang).tolist():
                m = lang == code
                rep.language_ap[int(code)] = average_precision(s[m], t[m])
                rep.language_sizes[int(code)] = int(m.sum())
        reports[name] = rep
    return EvalReport(n_groups, reports)
