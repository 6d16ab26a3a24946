"""Glue between the partition plan, per-chunk stores and training parts."""

from __future__ import annotations

import io
import json
import logging
import os
import zipfile
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .features.assemble import Assembler, FeatureBatch, FeatureLayout, labels_of
from .features.similarity import similar_user_clusters
from .features.store import FeatureStore, StoreConfig, build_store
from .partition import PipelinePlan
from .records import FollowerSets, InteractionRecord
from .sketch import SketchCodec

log = logging.getLogger(__name__)


@dataclass
class ChunkFeatures:
    chunk: int
    rows: np.ndarray
    batch: FeatureBatch
    labels: np.ndarray


def featurize_plan(log_records: Sequence[InteractionRecord], followers: FollowerSets, codec: SketchCodec,
                   plan: PipelinePlan, store_config: StoreConfig,
                   layout: Optional[FeatureLayout] = None) -> dict[int, ChunkFeatures]:
    """Features for every stage-1 and stage-2 chunk, each against its own history."""
    clusters = similar_user_clusters(followers, store_config.jaccard_threshold)
    out = {}
    for chunk in sorted(plan.stage1 + plan.stage2):
        rows = np.flatnonzero(plan.chunks == chunk)
        history = [log_records[i] for i in plan.history_rows(chunk)]
        store = build_store(history, followers, store_config, clusters=clusters)
        records = [log_records[i] for i in rows]
        batch = Assembler(store, codec, layout).assemble_many(records)
        out[chunk] = ChunkFeatures(chunk, rows, batch, labels_of(records))
        log.info("chunk %d: %d rows, history %d", chunk, len(rows), len(history))
    return out


def inference_store(log_records: Sequence[InteractionRecord], followers: FollowerSets,
                    plan: PipelinePlan, store_config: StoreConfig) -> FeatureStore:
    """Store over every row outside the local-evaluation holdout."""
    history = [log_records[i] for i in plan.inference_history_rows()]
    return build_store(history, followers, store_config)


def stage_parts(chunks: Mapping[int, ChunkFeatures], order: Sequence[int]):
    return [(chunks[c].batch, chunks[c].labels) for c in order if len(chunks[c].rows)]


# -- feature file ---------------------------------------------------------------

_FIELDS = ("sketch", "numeric", "categorical", "community_strengths")


def save_features(path, chunks: Mapping[int, ChunkFeatures], meta: str | None = None) -> None:
    """Write an ``.npz`` archive with fixed entry order and timestamps."""
    entries = {"meta": np.frombuffer(json.dumps({"config": meta}).encode(), dtype=np.uint8)}
    for c in sorted(chunks):
        f = chunks[c]
        entries[f"c{c}.rows"] = f.rows
        entries[f"c{c}.labels"] = f.labels
        for name in _FIELDS:
            entries[f"c{c}.{name}"] = getattr(f.batch, name)
    # written by hand so the archive is byte-identical across runs
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in entries.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_features(path) -> tuple[dict[int, ChunkFeatures], Optional[str]]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"feature file not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["meta"]).decode())["config"]
        ids = sorted({int(k.split(".")[0][1:]) for k in z.files if k != "meta"})
        out = {}
        for c in ids:
            batch = FeatureBatch(*(z[f"c{c}.{name}"] for name in _FIELDS))
            out[c] = ChunkFeatures(c, z[f"c{c}.rows"], batch, z[f"c{c}.labels"])
    return out, meta
