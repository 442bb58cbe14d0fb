from typing import Sequence

import numpy as np

from clada.core.arithmetic import ceil_fraction
from clada.core.exceptions import CorpusError, DimensionError
from clada.modules.corpus.records import CorpusRecord, unigram_distribution

TokenSource = Sequence[CorpusRecord] | Sequence[Sequence[int] | np.ndarray]


def _records(corpus: TokenSource) -> list[CorpusRecord]:
    return [
        item if isinstance(item, CorpusRecord) else CorpusRecord(id=str(i), tokens=[int(t) for t in item])
        for i, item in enumerate(corpus)
    ]


def make_rts(corpus: TokenSource, seed: int | np.random.SeedSequence, length: int, count: int) -> list[np.ndarray]:
    """Random token sequences drawn i.i.d. from the corpus unigram distribution.

    Raises:
        CorpusError: If the corpus holds no tokens.
    """
    if not corpus:
        raise CorpusError("cannot sample random token sequences from an empty corpus")
    ids, probs = unigram_distribution(_records(corpus))
    rng = np.random.default_rng(seed)
    return [rng.choice(ids, size=length, p=probs).astype(np.int64) for _ in range(count)]


def prefix_length(length: int, alpha: float) -> int:
    """ceil(length * alpha), with alpha read as the nearest short decimal fraction."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    return min(length, ceil_fraction(alpha, length))


def make_hybrid(a: Sequence[int] | np.ndarray, b: Sequence[int] | np.ndarray, alpha: float) -> np.ndarray:
    """A with its first ceil(L * alpha) tokens replaced by B's."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise DimensionError(f"hybrid needs equal lengths, got {a.size} and {b.size}")
    cut = prefix_length(a.size, alpha)
    return np.concatenate([b[:cut], a[cut:]])
