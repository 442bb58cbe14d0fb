"""Token-level cognitive load: surprisal and entropy of the next-token distribution, in nats."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
import pandas as pd
from scipy.special import entr, log_softmax, softmax

from clada.core.constants import SIGNAL_COLUMNS
from clada.core.exceptions import EmptyInputError, InsufficientContextError, InsufficientDataError, TokenRangeError
from clada.modules.model.transformer import forward
from clada.modules.model.weights import ModelWeights
from clada.settings import settings

logger = logging.getLogger(__name__)

SignalScale = Literal["normalized", "raw"]


def _log_floor() -> float:
    return math.log(settings.LOG_PROB_FLOOR)


def surprisal(logits: np.ndarray, target: int) -> float:
    """-log softmax(logits)[target], with the log argument clamped at LOG_PROB_FLOOR."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= target < logits.shape[-1]:
        raise TokenRangeError(f"target {target} outside vocabulary of size {logits.shape[-1]}")
    return float(-max(log_softmax(logits)[target], _log_floor()))


def entropy(logits: np.ndarray) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    value = float(entr(softmax(logits)).sum())
    return min(max(value, 0.0), math.log(logits.shape[-1]))


def signal_from_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise surprisal of `targets` and entropy of each logits row."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    log_probs = log_softmax(logits, axis=-1)
    picked = log_probs[np.arange(targets.size), targets]
    surprisals = -np.maximum(picked, _log_floor())
    entropies = np.clip(entr(np.exp(log_probs)).sum(axis=-1), 0.0, math.log(logits.shape[-1]))
    return surprisals, entropies


def normalize(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant sequence maps to zeros."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyInputError("cannot normalize an empty sequence")
    low, high = values.min(), values.max()
    if high == low:
        return np.zeros_like(values)
    return np.clip((values - low) / (high - low), 0.0, 1.0)


@dataclass
class CognitiveSignal:
    """Surprisal and entropy for positions 1..T-1 of one sequence."""

    surprisal_raw: np.ndarray
    entropy_raw: np.ndarray
    surprisal_norm: np.ndarray
    entropy_norm: np.ndarray

    @classmethod
    def from_raw(cls, surprisals: Sequence[float], entropies: Sequence[float]) -> "CognitiveSignal":
        surprisals = np.asarray(surprisals, dtype=np.float64)
        entropies = np.asarray(entropies, dtype=np.float64)
        return cls(surprisals, entropies, normalize(surprisals), normalize(entropies))

    def __len__(self) -> int:
        return int(self.surprisal_raw.size)

    def values(self, scale: SignalScale = "normalized") -> tuple[np.ndarray, np.ndarray]:
        if scale == "raw":
            return self.surprisal_raw, self.entropy_raw
        return self.surprisal_norm, self.entropy_norm

    def to_frame(self, sequence_id: str) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "sequence_id": sequence_id,
                "position": np.arange(1, len(self) + 1),
                "surprisal_raw": self.surprisal_raw,
                "entropy_raw": self.entropy_raw,
                "surprisal_norm": self.surprisal_norm,
                "entropy_norm": self.entropy_norm,
            }
        )


def signal_for_sequence(model: ModelWeights, tokens: Sequence[int] | np.ndarray) -> CognitiveSignal:
    """Surprisal and entropy of every token after the first, from one forward pass.

    Raises:
        InsufficientContextError: If the sequence has fewer than two tokens.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size < 2:
        raise InsufficientContextError(f"surprisal needs at least 2 tokens, got {tokens.size}")
    logits, _ = forward(model, tokens)
    surprisals, entropies = signal_from_logits(logits[:-1], tokens[1:])
    return CognitiveSignal.from_raw(surprisals, entropies)


def calibrate_thresholds(
    signals: Iterable[CognitiveSignal],
    q_s: float | None = None,
    q_H: float | None = None,
    min_tokens: int = 10,
    scale: SignalScale = "normalized",
) -> tuple[float, float]:
    """Pooled empirical quantiles of surprisal and entropy used as tau_s and tau_H.

    Raises:
        InsufficientDataError: If fewer than `min_tokens` signal values are pooled.
    """
    q_s = settings.SURPRISAL_QUANTILE if q_s is None else q_s
    q_H = settings.ENTROPY_QUANTILE if q_H is None else q_H
    for name, q in (("q_s", q_s), ("q_H", q_H)):
        if not 0.0 < q < 1.0:
            raise ValueError(f"{name} must be in (0, 1), got {q}")

    pooled = [signal.values(scale) for signal in signals]
    surprisals = np.concatenate([s for s, _ in pooled]) if pooled else np.empty(0)
    entropies = np.concatenate([h for _, h in pooled]) if pooled else np.empty(0)
    if surprisals.size < min_tokens:
        raise InsufficientDataError(f"calibration needs >= {min_tokens} tokens of signal, got {surprisals.size}")

    tau_s, tau_H = float(np.quantile(surprisals, q_s)), float(np.quantile(entropies, q_H))
    logger.info(f"Calibrated tau_s={tau_s:.4f} tau_H={tau_H:.4f} over {surprisals.size} tokens ({scale})")
    return tau_s, tau_H


def corpus_signals(
    model: ModelWeights, sequences: Iterable[Sequence[int] | np.ndarray]
) -> list[CognitiveSignal]:
    """Signals for every sequence long enough to score; shorter ones are skipped."""
    signals = []
    for tokens in sequences:
        if len(tokens) < 2:
            continue
        signals.append(signal_for_sequence(model, tokens))
    return signals


def dump_signals(signals: Sequence[tuple[str, CognitiveSignal]], path: str | Path) -> Path:
    frames = [signal.to_frame(sequence_id) for sequence_id, signal in signals]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=list(SIGNAL_COLUMNS))
    path = Path(path)
    frame[list(SIGNAL_COLUMNS)].to_csv(path, index=False)
    return path
