import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from clada.core.exceptions import DegenerateInputError, InsufficientDataError, PositionError, TokenRangeError
from clada.modules.model.transformer import KVCache, check_tokens, contribution_matrix, run_blocks
from clada.modules.model.weights import ModelWeights
from clada.modules.similarity.kernels import Metric, similarity

logger = logging.getLogger(__name__)


@dataclass
class ActivationMatrix:
    """Contribution matrix of one layer at one position; row j is n_j, shape [d_h x d_model]."""

    layer: int
    position: int
    matrix: np.ndarray


def probe(
    model: ModelWeights,
    tokens: Sequence[int] | np.ndarray,
    layer: int,
    position: int,
    follow: int | None = None,
) -> tuple[ActivationMatrix, np.ndarray]:
    """Activation matrix at `position` plus the logits of the given tokens.

    A position equal to len(tokens) probes the next-token position: `follow` (the
    greedy continuation when None) is appended and run through the cache in one
    extra step.

    Raises:
        PositionError: If position is negative or beyond len(tokens).
        TokenRangeError: If `follow` is outside the vocabulary.
    """
    weights = model.layer(layer)
    ids = check_tokens(model, tokens)
    length = ids.shape[1]
    if not 0 <= position <= length:
        raise PositionError(f"position {position} outside 0..{length}")
    if follow is not None and not 0 <= follow < model.dims.vocab_size:
        raise TokenRangeError(f"continuation token {follow} outside vocabulary of {model.dims.vocab_size}")

    captured: dict[str, np.ndarray] = {}

    def hook(index: int, _mlp_in: np.ndarray, gates: np.ndarray, _out: np.ndarray, _indices) -> None:
        if index == layer:
            captured["gates"] = gates[0]

    cache = KVCache.for_model(model, 1, length + 1)
    logits = run_blocks(model, ids, cache=cache, hook=hook)[0]
    if position < length:
        gates = captured["gates"][position]
    else:
        following = int(np.argmax(logits[-1])) if follow is None else follow
        run_blocks(model, np.array([[following]], dtype=np.int64), cache=cache, hook=hook)
        gates = captured["gates"][0]
    return ActivationMatrix(layer=layer, position=position, matrix=contribution_matrix(weights, gates)), logits


def extract_activation_matrix(
    model: ModelWeights, tokens: Sequence[int] | np.ndarray, layer: int, position: int
) -> ActivationMatrix:
    """N(position) of `layer`: row j is neuron j's contribution vector.

    Raises:
        LayerIndexError: If the layer is outside the model.
        PositionError: If position is negative or beyond len(tokens).
    """
    matrix, _ = probe(model, tokens, layer, position)
    return matrix


def pairwise_similarity(
    model: ModelWeights,
    samples: Sequence[Sequence[int] | np.ndarray],
    layer: int,
    position: int | None = None,
    metric: Metric = "cka",
) -> np.ndarray:
    """Symmetric similarity matrix of the samples' activation matrices, diagonal fixed at 1.

    `position=None` probes each sample's last token.
    """
    if len(samples) < 2:
        raise InsufficientDataError(f"pairwise similarity needs >= 2 samples, got {len(samples)}")
    matrices = [
        extract_activation_matrix(model, s, layer, len(s) - 1 if position is None else position).matrix for s in samples
    ]
    for index, matrix in enumerate(matrices):
        if not np.any(matrix):
            raise DegenerateInputError(f"sample {index}: activation matrix is all zeros")

    n = len(matrices)
    result = np.eye(n, dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            result[i, j] = result[j, i] = similarity(matrices[i], matrices[j], metric)
    return result
