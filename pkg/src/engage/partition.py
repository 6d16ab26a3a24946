"""Target chunks and feature history for leakage-controlled training.

Two planners. ``plan_day_windows`` cuts the log into non-overlapping
24-hour windows keyed on the engagement time of positive rows and the
tweet time of negative rows. ``plan_k_random`` deals rows into ``k``
random parts. In both, the feature history of a chunk is every other
row of the plan.

``plan_pipeline`` combines them the way training consumes them: the
early days become day-window parts (stage 1), the final days are the
validation analog, of which a random fraction is held out for local
evaluation and the rest is dealt into ``k`` random parts (stage 2).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .records import InteractionRecord, LogFormatError

DAY = 86400
PLAN_HEADER = "#partition-plan v1"
HOLDOUT = -1


@dataclass
class PartitionPlan:
    mode: str
    # chunk id per record; HOLDOUT marks rows outside every chunk
    chunks: np.ndarray
    # chunk ids in training order
    order: tuple[int, ...]

    @property
    def n_chunks(self) -> int:
        return len(self.order)

    def chunk_rows(self, chunk: int) -> np.ndarray:
        return np.flatnonzero(self.chunks == chunk)

    def history_mask(self, chunk: int) -> np.ndarray:
        """Rows feeding the feature store of ``chunk``: the plan minus the chunk."""
        return (self.chunks != chunk) & (self.chunks != HOLDOUT)


def event_time(rec: InteractionRecord) -> int:
    """Earliest reaction time for positive rows, tweet time otherwise."""
    present = [t for t in rec.reaction_timestamps if t is not None]
    return min(present) if present else rec.tweet_timestamp


def day_anchor(log: Sequence[InteractionRecord]) -> int:
    """Midnight UTC of the log's earliest timestamp."""
    t0 = min(r.tweet_timestamp for r in log)
    return t0 - t0 % DAY


def plan_day_windows(log: Sequence[InteractionRecord], seed: int = 0,
                     anchor: Optional[int] = None) -> PartitionPlan:
    if not log:
        raise ValueError("cannot partition an empty log")
    t0 = day_anchor(log) if anchor is None else anchor
    chunks = np.array([(event_time(r) - t0) // DAY for r in log], dtype=np.int64)
    ids = np.unique(chunks)
    if len(ids) < 2:
        raise ValueError("log spans a single day; day windows need at least two")
    order = tuple(int(c) for c in np.random.default_rng(seed).permutation(ids))
    return PartitionPlan("day-window", chunks, order)


def plan_k_random(log: Sequence[InteractionRecord], k: int = 10, seed: int = 0) -> PartitionPlan:
    """Deal rows into ``k`` parts uniformly at random; part sizes differ by at most one."""
    n = len(log)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the row count {n}")
    rng = np.random.default_rng(seed)
    chunks = np.empty(n, dtype=np.int64)
    chunks[rng.permutation(n)] = np.arange(n) % k
    order = tuple(int(c) for c in rng.permutation(k))
    return PartitionPlan("k-random", chunks, order)


def local_eval_mask(n: int, fraction: float = 0.1, seed: int = 0) -> np.ndarray:
    """Boolean mask selecting round(fraction * n) rows at random."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    mask = np.zeros(n, dtype=bool)
    mask[np.random.default_rng(seed).permutation(n)[: int(round(fraction * n))]] = True
    return mask


@dataclass
class PipelinePlan:
    chunks: np.ndarray
    stage1: tuple[int, ...]
    stage2: tuple[int, ...]

    def stage_rows(self, stage: Sequence[int]) -> np.ndarray:
        return np.flatnonzero(np.isin(self.chunks, list(stage)))

    def history_rows(self, chunk: int) -> np.ndarray:
        """Complement of ``chunk`` within the stage that contains it."""
        stage = self.stage1 if chunk in self.stage1 else self.stage2
        if chunk not in stage:
            raise KeyError(chunk)
        in_stage = np.isin(self.chunks, list(stage))
        return np.flatnonzero(in_stage & (self.chunks != chunk))

    def holdout_rows(self) -> np.ndarray:
        return np.flatnonzero(self.chunks == HOLDOUT)

    def inference_history_rows(self) -> np.ndarray:
        return np.flatnonzero(self.chunks != HOLDOUT)


def plan_pipeline(log: Sequence[InteractionRecord], validation_days: int = 1, k: int = 10,
                  eval_fraction: float = 0.1, seed: int = 0) -> PipelinePlan:
    t0 = day_anchor(log)
    day = np.array([(event_time(r) - t0) // DAY for r in log], dtype=np.int64)
    cut = int(day.max()) + 1 - validation_days
    train_idx = np.flatnonzero(day < cut)
    val_idx = np.flatnonzero(day >= cut)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ValueError("log too short for the requested validation period")
    chunks = np.full(len(log), HOLDOUT, dtype=np.int64)

    day_plan = plan_day_windows([log[i] for i in train_idx], seed=seed, anchor=t0)
    chunks[train_idx] = day_plan.chunks
    offset = int(day_plan.chunks.max()) + 1

    held = local_eval_mask(len(val_idx), eval_fraction, seed=seed + 1)
    fit_idx = val_idx[~held]
    k_plan = plan_k_random([log[i] for i in fit_idx], k=k, seed=seed + 2)
    chunks[fit_idx] = k_plan.chunks + offset
    return PipelinePlan(chunks, day_plan.order, tuple(c + offset for c in k_plan.order))


# -- plan file ----------------------------------------------------------------


def save_plan(path, plan: PipelinePlan, meta: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(PLAN_HEADER + "\n")
        if meta is not None:
            fh.write(f"#config {meta}\n")
        fh.write("#stage1 " + ",".join(map(str, plan.stage1)) + "\n")
        fh.write("#stage2 " + ",".join(map(str, plan.stage2)) + "\n")
        for i, c in enumerate(plan.chunks.tolist()):
            fh.write(f"{i}\t{c}\n")


def load_plan(path) -> PipelinePlan:
    if not os.path.exists(path):
        raise FileNotFoundError(f"plan file not found: {path}")
    stages: dict[str, tuple[int, ...]] = {}
    chunks = []
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != PLAN_HEADER:
            raise LogFormatError(f"bad header {first!r}", path, 1)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if line.startswith("#"):
                tag, _, rest = line.partition(" ")
                if tag in ("#stage1", "#stage2"):
                    stages[tag[1:]] = tuple(int(x) for x in rest.split(",") if x)
                continue
            try:
                idx, c = (int(x) for x in line.split("\t"))
            except ValueError:
                raise LogFormatError(f"bad plan row {line!r}", path, lineno) from None
            if idx != len(chunks):
                raise LogFormatError(f"record index {idx} out of sequence", path, lineno)
            chunks.append(c)
    if set(stages) != {"stage1", "stage2"}:
        raise LogFormatError("missing #stage1/#stage2 lines", path)
    return PipelinePlan(np.array(chunks, dtype=np.int64), stages["stage1"], stages["stage2"])
