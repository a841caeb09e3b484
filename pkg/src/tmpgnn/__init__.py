"""Position-aware embeddings and edge-feature imputation for temporal multilayer graphs."""
__version__ = "0.1.0"

from .embedder import TMPGNNEmbedder
from .graph import SynthConfig, TemporalMultilayerGraph, load_graph, save_graph, synth_graph
from .imputation import EdgeImputer, evaluate_mae, mask_remove
from .spectral import SupraCentrality, select_omega

__all__ = [
    "EdgeImputer",
    "SupraCentrality",
    "SynthConfig",
    "TMPGNNEmbedder",
    "TemporalMultilayerGraph",
    "evaluate_mae",
    "load_graph",
    "mask_remove",
    "save_graph",
    "select_omega",
    "synth_graph",
]
