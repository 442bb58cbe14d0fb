from .tokenizer import ByteTokenizer, detokenize, tokenize
from .transformer import (
    ActivationTrace,
    FlopCounter,
    KVCache,
    LayerTrace,
    SparseMLP,
    TraceConfig,
    forward,
    forward_masked,
)
from .weight_file import load_model, save_model
from .weights import ActivationFn, LayerWeights, ModelDims, ModelWeights, gen_random_model, plant_dead_neurons

__all__ = [
    "ActivationFn",
    "ActivationTrace",
    "ByteTokenizer",
    "FlopCounter",
    "KVCache",
    "LayerTrace",
    "LayerWeights",
    "ModelDims",
    "ModelWeights",
    "SparseMLP",
    "TraceConfig",
    "detokenize",
    "forward",
    "forward_masked",
    "gen_random_model",
    "load_model",
    "plant_dead_neurons",
    "save_model",
    "tokenize",
]
