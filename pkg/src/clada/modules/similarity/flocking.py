"""Prefix-replacement experiment: how much a shared prefix pulls activation patterns together.

For each pair (A, B) and prefix ratio alpha, A' takes B's first ceil(L * alpha) tokens
and keeps the rest of A. The similarity shift of A' towards B at the next-token
position becomes one panel row per similarity metric, along with A''s mean
normalized surprisal and entropy as covariates.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from clada.core.constants import DEFAULT_ALPHAS, GROUPS, METRICS, PANEL_COLUMNS
from clada.core.exceptions import ContextLengthError, InsufficientDataError
from clada.modules.cogload.metrics import CognitiveSignal, signal_from_logits
from clada.modules.corpus.records import CorpusRecord
from clada.modules.model.weights import ModelWeights
from clada.modules.similarity.extraction import probe
from clada.modules.similarity.kernels import delta_sim, similarity
from clada.modules.similarity.sequences import make_hybrid, make_rts, prefix_length
from clada.settings import settings

logger = logging.getLogger(__name__)


class PanelObservation(BaseModel):
    pair_id: int
    group: str
    metric: str
    alpha: float
    prefix_len: int
    token_len: int
    surprisal_mean_norm: float
    entropy_mean_norm: float
    delta_sim: float


def default_layer(model: ModelWeights) -> int:
    return model.dims.n_layers // 2


def _covariates(logits: np.ndarray, tokens: np.ndarray) -> tuple[float, float]:
    surprisals, entropies = signal_from_logits(logits[:-1], tokens[1:])
    signal = CognitiveSignal.from_raw(surprisals, entropies)
    return float(signal.surprisal_norm.mean()), float(signal.entropy_norm.mean())


def _pair_rows(
    model: ModelWeights,
    pair_id: int,
    group: str,
    a: np.ndarray,
    b: np.ndarray,
    alphas: Sequence[float],
    layer: int,
) -> list[PanelObservation]:
    """Panel rows of one (A, B) pair.

    All three sequences are probed at position L on the same token, B's greedy
    continuation, so the matrices differ only through their context. A metric whose
    reference similarity sim(A, B) is not positive is skipped for the pair.
    """
    length = a.size
    mb, logits_b = probe(model, b, layer, length)
    follow = int(np.argmax(logits_b[-1]))
    ma, _ = probe(model, a, layer, length, follow)

    metrics = []
    for metric in METRICS:
        base = similarity(ma.matrix, mb.matrix, metric)
        if base <= settings.DEGENERATE_NORM:
            logger.warning(f"Pair {pair_id} {group}: {metric} reference similarity {base:.3g} is not positive, skipped")
            continue
        metrics.append(metric)

    rows = []
    for alpha in alphas:
        hybrid = make_hybrid(a, b, alpha)
        ma_prime, logits = probe(model, hybrid, layer, length, follow)
        s_mean, h_mean = _covariates(logits, hybrid)
        for metric in metrics:
            rows.append(
                PanelObservation(
                    pair_id=pair_id,
                    group=group,
                    metric=metric,
                    alpha=float(alpha),
                    prefix_len=prefix_length(length, alpha),
                    token_len=length,
                    surprisal_mean_norm=s_mean,
                    entropy_mean_norm=h_mean,
                    delta_sim=delta_sim(ma.matrix, mb.matrix, ma_prime.matrix, metric),
                )
            )
    return rows


def run_flocking_experiment(
    model: ModelWeights,
    corpus: Sequence[CorpusRecord],
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    groups: Sequence[str] = GROUPS,
    layer: int | None = None,
    n_pairs: int | None = None,
    seq_len: int | None = None,
    seed: int | None = None,
) -> pd.DataFrame:
    """Build the similarity-shift panel for every pair, alpha, group and metric.

    NLS pairs are disjoint corpus sequences cut to `seq_len`; RTS pairs are drawn from
    the corpus unigram distribution with a per-pair seed. Pairs run on a thread pool;
    rows are sorted by (pair_id, group, alpha, metric) so the output does not depend
    on scheduling.

    Raises:
        InsufficientDataError: If the corpus lacks 2 * n_pairs sequences of seq_len tokens.
    """
    layer = default_layer(model) if layer is None else layer
    model.layer(layer)
    n_pairs = settings.FLOCK_PAIRS if n_pairs is None else n_pairs
    seq_len = settings.FLOCK_SEQ_LEN if seq_len is None else seq_len
    seed = settings.DEFAULT_SEED if seed is None else seed
    if seq_len + 1 > model.dims.max_ctx:
        raise ContextLengthError(f"probe position {seq_len} needs max_ctx > {seq_len}, got {model.dims.max_ctx}")
    unknown = set(groups) - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown groups {sorted(unknown)}, expected a subset of {GROUPS}")

    if not corpus:
        raise InsufficientDataError("flocking experiment needs a non-empty corpus")
    long_enough = [r for r in corpus if r.group != "RTS" and len(r.tokens) >= seq_len]
    if "NLS" in groups and len(long_enough) < 2 * n_pairs:
        raise InsufficientDataError(
            f"{n_pairs} pairs need {2 * n_pairs} NLS sequences of >= {seq_len} tokens, corpus has {len(long_enough)}"
        )
    order = np.random.default_rng(seed).permutation(len(long_enough))

    def run_pair(pair_id: int) -> list[PanelObservation]:
        rows = []
        for group in groups:
            if group == "NLS":
                a, b = (np.asarray(long_enough[order[2 * pair_id + k]].tokens[:seq_len], dtype=np.int64) for k in (0, 1))
            else:
                a, b = make_rts(corpus, np.random.SeedSequence([seed, pair_id]), seq_len, 2)
            rows.extend(_pair_rows(model, pair_id, group, a, b, alphas, layer))
        logger.debug(f"Pair {pair_id} done")
        return rows

    with ThreadPoolExecutor(max_workers=settings.worker_count) as pool:
        results = list(pool.map(run_pair, range(n_pairs)))

    frame = pd.DataFrame([row.model_dump() for rows in results for row in rows], columns=list(PANEL_COLUMNS))
    frame = frame.sort_values(["pair_id", "group", "alpha", "metric"], kind="stable").reset_index(drop=True)
    logger.info(f"Flocking experiment: {len(frame)} rows, layer {layer}, {n_pairs} pairs")
    return frame


def write_panel(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    frame[list(PANEL_COLUMNS)].to_csv(path, index=False)
    return path


def read_panel(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Panel file not found: {path}")
    frame = pd.read_csv(path)
    missing = set(PANEL_COLUMNS) - set(frame.columns)
    if missing:
        raise InsufficientDataError(f"panel {path} lacks columns {sorted(missing)}")
    return frame
