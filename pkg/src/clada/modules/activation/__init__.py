from .meter import (
    Aggregation,
    CettEvaluator,
    CettReport,
    CettSummary,
    NeuronMagnitudes,
    build_mask,
    cett,
    dump_magnitudes,
    magnitudes,
    mean_cett,
    mean_cett_report,
    mlp_states,
    neuron_contribution,
    per_token_magnitudes,
    sample_states,
)

__all__ = [
    "Aggregation",
    "CettEvaluator",
    "CettReport",
    "CettSummary",
    "NeuronMagnitudes",
    "build_mask",
    "cett",
    "dump_magnitudes",
    "magnitudes",
    "mean_cett",
    "mean_cett_report",
    "mlp_states",
    "neuron_contribution",
    "per_token_magnitudes",
    "sample_states",
]
