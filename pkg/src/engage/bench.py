"""Single-core latency of one full prediction.

The measured path is what serving one impression costs: store lookups,
sketch and Fourier encoding, embedding gathers and the forward pass.
Reading the records from disk is not measured.
"""

from __future__ import annotations

import gc
import os
import time
import tracemalloc
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features.assemble import Assembler
from .model import InferenceNet
from .records import InteractionRecord


@dataclass
class BenchResult:
    latencies_ms: np.ndarray
    warmup: int
    cpu: int | None
    wall_s: float
    alloc_growth_bytes: int

    @property
    def n(self) -> int:
        return int(self.latencies_ms.size)

    @property
    def p50(self) -> float:
        return float(np.percentile(self.latencies_ms, 50))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.latencies_ms, 95))

    @property
    def max(self) -> float:
        return float(self.latencies_ms.max())

    @property
    def mean(self) -> float:
        return float(self.latencies_ms.mean())

    def lines(self) -> list[str]:
        return [
            f"predictions\t{self.n}",
            f"warmup\t{self.warmup}",
            f"cpu\t{'unpinned' if self.cpu is None else self.cpu}",
            f"p50_ms\t{self.p50:.4f}",
            f"p95_ms\t{self.p95:.4f}",
            f"max_ms\t{self.max:.4f}",
            f"mean_ms\t{self.mean:.4f}",
            f"wall_s\t{self.wall_s:.2f}",
            f"alloc_growth_bytes\t{self.alloc_growth_bytes}",
        ]


def pin_to_cpu(cpu: int) -> int | None:
    """Restrict this process to one logical CPU; returns it, or None if unsupported."""
    if not hasattr(os, "sched_setaffinity"):
        return None
    allowed = sorted(os.sched_getaffinity(0))
    target = cpu if cpu in allowed else allowed[0]
    os.sched_setaffinity(0, {target})
    return target


def _predict(net: InferenceNet, assembler: Assembler, rec: InteractionRecord) -> np.ndarray:
    return net.predict_one(assembler.assemble(rec))


def allocation_growth(net: InferenceNet, assembler: Assembler, records: Sequence[InteractionRecord],
                      n: int = 2000, settle: int = 200) -> int:
    """Net bytes still allocated after ``n`` predictions (after ``settle`` unmeasured ones)."""
    tracemalloc.start()
    try:
        for i in range(settle):
            _predict(net, assembler, records[i % len(records)])
        gc.collect()
        before = tracemalloc.get_traced_memory()[0]
        for i in range(n):
            _predict(net, assembler, records[(settle + i) % len(records)])
        gc.collect()
        after = tracemalloc.get_traced_memory()[0]
    finally:
        tracemalloc.stop()
    return after - before


def run_bench(net: InferenceNet, assembler: Assembler, records: Sequence[InteractionRecord],
              predictions: int = 10_000, warmup: int = 1000, cpu: int | None = 0,
              alloc_check: int = 2000) -> BenchResult:
    """Replay ``records`` one at a time (cycling) and time each prediction."""
    if not records:
        raise ValueError("no records to replay")
    pinned = pin_to_cpu(cpu) if cpu is not None else None
    start = time.perf_counter()
    for i in range(warmup):
        _predict(net, assembler, records[i % len(records)])
    lat = np.empty(predictions, dtype=np.float64)
    clock = time.perf_counter_ns
    for i in range(predictions):
        rec = records[(warmup + i) % len(records)]
        t0 = clock()
        _predict(net, assembler, rec)
        lat[i] = clock() - t0
    wall = time.perf_counter() - start
    growth = allocation_growth(net, assembler, records, alloc_check) if alloc_check else 0
    return BenchResult(lat / 1e6, warmup, pinned, wall, growth)
