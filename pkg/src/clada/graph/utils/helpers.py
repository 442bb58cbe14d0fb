import logging

from clada.modules.corpus.records import CorpusRecord, make_synthetic_corpus, read_corpus
from clada.modules.model.weight_file import load_model
from clada.modules.model.weights import ActivationFn, ModelDims, ModelWeights, gen_random_model
from clada.settings import settings

logger = logging.getLogger(__name__)


def default_dims() -> ModelDims:
    return ModelDims(
        n_layers=settings.MODEL_LAYERS,
        d_model=settings.MODEL_D_MODEL,
        d_h=settings.MODEL_D_H,
        n_heads=settings.MODEL_N_HEADS,
        vocab_size=settings.MODEL_VOCAB_SIZE,
        max_ctx=settings.MODEL_MAX_CTX,
    )


def get_model(path: str | None, seed: int) -> ModelWeights:
    if path:
        return load_model(path)
    logger.info(f"No model given, generating one with seed {seed}")
    return gen_random_model(seed, default_dims(), ActivationFn(settings.MODEL_ACTIVATION))


def get_corpus(path: str | None, seed: int, count: int, length: int) -> list[CorpusRecord]:
    if path:
        return read_corpus(path)
    logger.info(f"No corpus given, generating {count} synthetic sequences of {length} tokens")
    return make_synthetic_corpus(seed, count, length)
