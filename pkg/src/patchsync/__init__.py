"""Overlapping patch decomposition and synchronization-based stitching of graph embeddings."""
from .align import AlignmentResult, align_patches, hierarchical_align
from .errors import (ConfigError, DataError, DegenerateError, DisconnectedError, NumericalError,
                     PatchSyncError)
from .evaluation import generate_synthetic, procrustes_error, reconstruction_auc
from .graph import EmbeddingMatrix, SparseGraph, load_edge_list
from .kernels import BACKEND as KERNEL_BACKEND
from .patches import PatchGraph, build_patches

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult", "ConfigError", "DataError", "DegenerateError", "DisconnectedError",
    "EmbeddingMatrix", "KERNEL_BACKEND", "NumericalError", "PatchGraph", "PatchSyncError",
    "SparseGraph", "align_patches", "build_patches", "generate_synthetic", "hierarchical_align",
    "load_edge_list", "procrustes_error", "reconstruction_auc",
]
