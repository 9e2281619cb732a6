"""Random objects of the model: rooted clusters, envelopes, box graphs."""
from .batch import SAMPLE_COLUMNS, BatchResult, block_seed, resolve_workers, run_batch
from .box import BoxGraph, ResourceRefusal, sample_box_graph
from .explore import (ClusterSample, ExplorationConfig, explore_branching, explore_cluster,
                      explore_coupled, two_root_connect)

__all__ = [
    "SAMPLE_COLUMNS",
    "BatchResult",
    "BoxGraph",
    "ClusterSample",
    "ExplorationConfig",
    "ResourceRefusal",
    "block_seed",
    "explore_branching",
    "explore_cluster",
    "explore_coupled",
    "resolve_workers",
    "run_batch",
    "sample_box_graph",
    "two_root_connect",
]
