from .metrics import (
    CognitiveSignal,
    calibrate_thresholds,
    corpus_signals,
    dump_signals,
    entropy,
    normalize,
    signal_for_sequence,
    signal_from_logits,
    surprisal,
)

__all__ = [
    "CognitiveSignal",
    "calibrate_thresholds",
    "corpus_signals",
    "dump_signals",
    "entropy",
    "normalize",
    "signal_for_sequence",
    "signal_from_logits",
    "surprisal",
]
