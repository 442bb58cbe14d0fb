import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from clada.core.arithmetic import ceil_fraction
from clada.core.constants import SYNTHETIC_WORDS
from clada.core.exceptions import CorpusError

logger = logging.getLogger(__name__)


class CorpusRecord(BaseModel):
    """One JSON-lines corpus entry: {"id": str, "group": str, "tokens": [u32]}."""

    id: str = Field(min_length=1)
    group: str = "NLS"
    tokens: list[int]


def read_corpus(path: str | Path) -> list[CorpusRecord]:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"Corpus file not found: {path}")

    records = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(CorpusRecord.model_validate_json(line))
            except ValidationError as e:
                raise CorpusError(f"{path}:{line_no}: {e.errors()[0]['msg']}") from e
    if not records:
        raise CorpusError(f"Corpus {path} is empty")
    logger.info(f"Read {len(records)} sequences from {path}")
    return records


def write_corpus(records: Iterable[CorpusRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.model_dump(), separators=(",", ":")) + "\n")
    return path


def _zipf_weights(count: int, exponent: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, count + 1, dtype=np.float64) ** exponent
    return weights / weights.sum()


def make_synthetic_corpus(
    seed: int, count: int, length: int, group: str = "NLS", zipf_exponent: float = 1.1
) -> list[CorpusRecord]:
    """Zipf-weighted English-like word sequences, byte tokenized and cut to exactly `length` tokens.

    Stands in for a natural-language corpus: sentences start capitalised, end with a
    period, and word frequencies follow a power law over a fixed word list.
    """
    if count < 1 or length < 1:
        raise CorpusError(f"count and length must be >= 1, got count={count} length={length}")

    rng = np.random.default_rng(seed)
    probs = _zipf_weights(len(SYNTHETIC_WORDS), zipf_exponent)
    records = []
    for index in range(count):
        pieces: list[str] = []
        size = 0
        while size < length:
            n_words = int(rng.integers(6, 18))
            words = [SYNTHETIC_WORDS[i] for i in rng.choice(len(SYNTHETIC_WORDS), size=n_words, p=probs)]
            sentence = " ".join(words).capitalize() + ". "
            pieces.append(sentence)
            size += len(sentence)
        tokens = list("".join(pieces).encode("utf-8")[:length])
        records.append(CorpusRecord(id=f"{group.lower()}-{index:05d}", group=group, tokens=tokens))
    logger.info(f"Generated synthetic corpus seed={seed} count={count} length={length}")
    return records


def validation_slice(
    records: Sequence[CorpusRecord], fraction: float, token_cap: int, max_ctx: int
) -> tuple[list[np.ndarray], str]:
    """Held-out tail of a corpus used as the search sample.

    Takes the last ceil(fraction * n) records, cuts each to max_ctx tokens and stops
    once `token_cap` tokens are collected.

    Returns:
        The token arrays and a description recorded in policy metadata.
    """
    if not records:
        raise CorpusError("cannot take a validation slice of an empty corpus")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")

    n_tail = max(1, ceil_fraction(fraction, len(records)))
    tail = records[len(records) - n_tail :]
    sample: list[np.ndarray] = []
    collected = 0
    for record in tail:
        if collected >= token_cap:
            break
        take = min(len(record.tokens), max_ctx, token_cap - collected)
        if take < 1:
            continue
        sample.append(np.asarray(record.tokens[:take], dtype=np.int64))
        collected += take
    if not sample:
        raise CorpusError("validation slice holds no tokens")
    description = f"tail {n_tail}/{len(records)} records, {collected} tokens (cap {token_cap})"
    return sample, description


def unigram_distribution(records: Sequence[CorpusRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Token ids present in the corpus and their relative frequencies."""
    if not records or not any(record.tokens for record in records):
        raise CorpusError("corpus holds no tokens")
    ids, counts = np.unique(np.concatenate([np.asarray(r.tokens, dtype=np.int64) for r in records]), return_counts=True)
    return ids, counts / counts.sum()
