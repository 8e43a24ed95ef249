"""Speaker clustering with path integral clustering and self-supervised embedding refinement."""

from .ahc import Partition, ahc_cluster
from .data import (
    Annotation,
    Recording,
    SegmentWindow,
    SynthConfig,
    Turn,
    load_embeddings,
    load_rttm,
    load_segments,
    synth_recording,
)
from .engine import SYSTEMS, SscConfig, SscTrace, estimate_num_clusters, run_ssc, run_system
from .pic import build_digraph, pic_affinity, pic_cluster, pic_state
from .scoring import DerBreakdown, der, f_ratio, partition_to_annotation
from .similarity import cosine_matrix, temporal_weight

__version__ = "0.1.0"

__all__ = [
    "Annotation", "DerBreakdown", "Partition", "Recording", "SYSTEMS", "SegmentWindow",
    "SscConfig", "SscTrace", "SynthConfig", "Turn", "ahc_cluster", "build_digraph",
    "cosine_matrix", "der", "estimate_num_clusters", "f_ratio", "load_embeddings",
    "load_rttm", "load_segments", "partition_to_annotation", "pic_affinity",
    "pic_cluster", "pic_state", "run_ssc", "run_system", "synth_recording",
    "temporal_weight",
]
