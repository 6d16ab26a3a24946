from .assemble import (
    NUMERIC_NAMES,
    AssembledFeatures,
    Assembler,
    FeatureBatch,
    FeatureLayout,
    assemble,
    labels_of,
)
from .community import community_partitions, louvain, modularity, same_partition
from .similarity import jaccard, similar_pairs, similar_user_clusters
from .store import FeatureStore, ReactionCounts, StoreConfig, build_store, load_store, save_store

__all__ = [
    "NUMERIC_NAMES",
    "AssembledFeatures",
    "Assembler",
    "FeatureBatch",
    "FeatureLayout",
    "FeatureStore",
    "ReactionCounts",
    "StoreConfig",
    "assemble",
    "build_store",
    "community_partitions",
    "jaccard",
    "labels_of",
    "load_store",
    "louvain",
    "modularity",
    "same_partition",
    "save_store",
    "similar_pairs",
    "similar_user_clusters",
]
