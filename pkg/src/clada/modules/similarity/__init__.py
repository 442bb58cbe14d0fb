from .extraction import ActivationMatrix, extract_activation_matrix, pairwise_similarity, probe
from .flocking import PanelObservation, default_layer, read_panel, run_flocking_experiment, write_panel
from .heatmap import export_heatmap, to_grey
from .kernels import cka, cosine, delta_sim, similarity
from .sequences import make_hybrid, make_rts, prefix_length

__all__ = [
    "ActivationMatrix",
    "PanelObservation",
    "cka",
    "cosine",
    "default_layer",
    "delta_sim",
    "export_heatmap",
    "extract_activation_matrix",
    "make_hybrid",
    "make_rts",
    "pairwise_similarity",
    "prefix_length",
    "probe",
    "read_panel",
    "run_flocking_experiment",
    "similarity",
    "to_grey",
    "write_panel",
]
