"""Report figures: per-group AP, per-language AP, latency histogram."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import EvalReport  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}
COLORS = {"like": "#1b9e77", "reply": "#d95f02", "retweet": "#7570b3", "quote": "#e7298a"}


def new(width: float = 6.0, nrows: int = 1, ncols: int = 1):
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(nrows, ncols, figsize=(width, width * golden))
    return fig, ax


def save(fig, path) -> None:
    with plt.rc_context(STYLE):
        # fixed metadata keeps the PNG bytes reproducible
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _nan(v):
    return np.nan if v is None else v


def plot_group_ap(report: EvalReport, path, title: str = "") -> None:
    """AP per author-popularity group, one line per reaction."""
    fig, axes = new(7.0, 2, 2)
    groups = np.arange(report.n_groups)
    for ax, (name, rep) in zip(axes.ravel(), report.reactions.items()):
        ap = np.array([_nan(v) for v in rep.group_ap], dtype=float)
        ax.plot(groups, ap, marker="." if report.n_groups > 20 else "o", lw=1, color=COLORS[name])
        if rep.mean_ap is not None:
            ax.axhline(rep.mean_ap, ls="--", lw=0.8, color="0.4")
        ax.set_title(name)
        ax.set_xlabel("author popularity group")
        ax.set_ylabel("AP")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    save(fig, path)


def plot_language_ap(report: EvalReport, path) -> None:
    """AP against language popularity (rows per language)."""
    fig, ax = new(5.0)
    for name, rep in report.reactions.items():
        langs = sorted(rep.language_ap)
        x = [rep.language_sizes[lang] for lang in langs]
        y = [_nan(rep.language_ap[lang]) for lang in langs]
        ax.scatter(x, y, s=14, label=name, color=COLORS[name])
    ax.set_xlabel("rows in language")
    ax.set_ylabel("AP")
    ax.legend(frameon=False)
    save(fig, path)


def plot_latency(latencies_ms, path, p95_budget: float | None = None, p50_budget: float | None = None) -> None:
    lat = np.asarray(latencies_ms, dtype=float)
    fig, ax = new(5.0)
    hi = float(np.percentile(lat, 99.9)) if lat.size else 1.0
    ax.hist(np.clip(lat, 0, hi), bins=80, color="0.35")
    for q, style in ((50, "-"), (95, "--")):
        ax.axvline(np.percentile(lat, q), color="#d95f02", ls=style, lw=1, label=f"p{q}")
    if p95_budget is not None:
        ax.axvline(p95_budget, color="#b2182b", lw=1.2, label="p95 budget")
    if p50_budget is not None:
        ax.axvline(p50_budget, color="#2166ac", lw=1.2, label="p50 budget")
    ax.set_xlabel("latency per prediction (ms)")
    ax.set_ylabel("predictions")
    ax.legend(frameon=False)
    save(fig, path)
