import logging
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from clada.core.constants import MAGNITUDE_COLUMNS
from clada.core.exceptions import (
    DegenerateDenominatorError,
    DimensionError,
    EmptyInputError,
    InsufficientDataError,
    NeuronIndexError,
)
from clada.modules.model.transformer import TraceConfig, activate, forward, mlp_gates
from clada.modules.model.weights import ModelWeights
from clada.settings import settings

logger = logging.getLogger(__name__)


class Aggregation(StrEnum):
    PER_TOKEN = "per_token"
    MEAN = "mean_over_prefix"
    MAX = "max_over_prefix"


@dataclass
class NeuronMagnitudes:
    """Activation magnitudes A_j of one layer.

    `values` is the aggregate over `source_positions`; for PER_TOKEN it is the most
    recent position's row. `per_token` keeps every row [positions x d_h].
    """

    layer: int
    values: np.ndarray
    aggregation: Aggregation
    source_positions: tuple[int, int]
    per_token: np.ndarray | None = None

    @property
    def d_h(self) -> int:
        return int(self.values.shape[0])


class CettReport(BaseModel):
    layer: int
    epsilon: float
    cett: float
    cut_set_size: int
    denominator: float


class CettSummary(BaseModel):
    """Mean CETT over a sample, with the tokens that had to be skipped."""

    layer: int
    epsilon: float
    mean_cett: float
    n_tokens: int
    n_degenerate: int
    mean_cut_size: float


def _check_state(model: ModelWeights, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.shape[-1] != model.dims.d_model:
        raise DimensionError(f"hidden state has width {x.shape[-1]}, expected d_model={model.dims.d_model}")
    return x


def neuron_contribution(model: ModelWeights, layer: int, x: np.ndarray, j: int) -> np.ndarray:
    """n_j(x) = sigma(W_in[j] . x) * (V_in[j] . x) * W_out[:, j]."""
    weights = model.layer(layer)
    if not 0 <= j < model.dims.d_h:
        raise NeuronIndexError(f"neuron {j} out of range for d_h={model.dims.d_h}")
    x = _check_state(model, x)
    if x.ndim != 1:
        raise DimensionError(f"expected one hidden state, got shape {x.shape}")
    pre = np.float32(weights.w_in[j] @ x)
    gate = activate(np.array([pre]), model.activation_fn)[0] * np.float32(weights.v_in[j] @ x)
    return gate * weights.w_out_t[j]


def per_token_magnitudes(model: ModelWeights, layer: int, states: np.ndarray) -> np.ndarray:
    """A_j(t) = |g_j(x_t)| * ||W_out[:, j]|| for each row of `states`."""
    weights = model.layer(layer)
    states = np.atleast_2d(_check_state(model, states))
    return np.abs(mlp_gates(weights, states, model.activation_fn)) * weights.w_out_col_norms


def aggregate(per_token: np.ndarray, aggregation: Aggregation) -> np.ndarray:
    if aggregation == Aggregation.MEAN:
        return per_token.mean(axis=0)
    if aggregation == Aggregation.MAX:
        return per_token.max(axis=0)
    return per_token[-1]


def magnitudes(
    model: ModelWeights,
    layer: int,
    prefix_states: np.ndarray,
    aggregation: Aggregation | str = Aggregation.MEAN,
    start: int = 0,
) -> NeuronMagnitudes:
    """Per-neuron activation magnitudes over a prefix of MLP input states.

    Args:
        prefix_states: [positions x d_model] inputs to the layer's MLP.
        aggregation: How per-token magnitudes combine across the prefix.
        start: Position of the first row, recorded in `source_positions`.

    Raises:
        EmptyInputError: If `prefix_states` has no rows.
    """
    prefix_states = np.asarray(prefix_states, dtype=np.float32)
    if prefix_states.size == 0:
        raise EmptyInputError("magnitudes need at least one prefix state")
    aggregation = Aggregation(aggregation)
    per_token = per_token_magnitudes(model, layer, prefix_states)
    return NeuronMagnitudes(
        layer=layer,
        values=aggregate(per_token, aggregation),
        aggregation=aggregation,
        source_positions=(start, start + per_token.shape[0]),
        per_token=per_token,
    )


def build_mask(mags: NeuronMagnitudes | np.ndarray, tau: float) -> tuple[np.ndarray, float]:
    """Keep neurons with A_j >= tau.

    Returns:
        The boolean mask and its sparsity 1 - active / d_h.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    values = mags.values if isinstance(mags, NeuronMagnitudes) else mags
    mask = np.asarray(values, dtype=np.float64) >= float(tau)
    return mask, 1.0 - float(mask.sum()) / mask.size


def mlp_states(model: ModelWeights, layer: int, sample: Sequence[Sequence[int] | np.ndarray]) -> np.ndarray:
    """Concatenated MLP input states of `layer` over every token of every sequence in `sample`."""
    return sample_states(model, [layer], sample)[layer]


def sample_states(
    model: ModelWeights, layers: Sequence[int], sample: Sequence[Sequence[int] | np.ndarray]
) -> dict[int, np.ndarray]:
    for layer in layers:
        model.layer(layer)
    if not sample:
        raise EmptyInputError("sample holds no sequences")
    cfg = TraceConfig(layers=tuple(layers))
    collected: dict[int, list[np.ndarray]] = {layer: [] for layer in layers}
    for tokens in sample:
        if len(tokens) == 0:
            continue
        _, trace = forward(model, tokens, cfg)
        for layer in layers:
            collected[layer].append(trace[layer].mlp_input)
    if not collected[layers[0]]:
        raise EmptyInputError("sample holds no tokens")
    return {layer: np.concatenate(rows, axis=0) for layer, rows in collected.items()}


class CettEvaluator:
    """Evaluates CETT for one layer over a fixed set of MLP input states.

    Gates, magnitudes and output norms are computed once in float64 so repeated
    evaluations at different epsilons only redo the cut-set projection. Tokens whose
    MLP output norm falls below the degenerate bound are excluded and counted.
    """

    def __init__(self, model: ModelWeights, layer: int, states: np.ndarray, chunk_rows: int = 256):
        self.logger = logging.getLogger(__name__)
        self.layer = layer
        self.chunk_rows = chunk_rows
        weights = model.layer(layer)
        states = np.atleast_2d(_check_state(model, states))
        if states.shape[0] == 0:
            raise EmptyInputError("CETT needs at least one token")

        gates = mlp_gates(weights, states, model.activation_fn).astype(np.float64)
        self.w_out_t = weights.w_out_t.astype(np.float64)
        denominators = np.linalg.norm(self._project(gates), axis=1)
        valid = denominators >= settings.DEGENERATE_NORM
        self.n_degenerate = int((~valid).sum())
        if self.n_degenerate:
            self.logger.warning(f"Layer {layer}: skipping {self.n_degenerate} tokens with degenerate MLP output")
        if not valid.any():
            raise InsufficientDataError(f"layer {layer}: every token has a degenerate MLP output norm")

        self.gates = gates[valid]
        self.magnitudes = np.abs(self.gates) * weights.w_out_col_norms.astype(np.float64)
        self.denominators = denominators[valid]

    @property
    def n_tokens(self) -> int:
        return int(self.gates.shape[0])

    @property
    def max_magnitude(self) -> float:
        return float(self.magnitudes.max())

    def _project(self, gates: np.ndarray) -> np.ndarray:
        out = np.empty((gates.shape[0], self.w_out_t.shape[1]), dtype=np.float64)
        for lo in range(0, gates.shape[0], self.chunk_rows):
            out[lo : lo + self.chunk_rows] = gates[lo : lo + self.chunk_rows] @ self.w_out_t
        return out

    def ratios(self, epsilon: float) -> np.ndarray:
        """Per-token CETT at `epsilon`; rows cut entirely give exactly 1, rows cut nowhere exactly 0."""
        if epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {epsilon}")
        cut = self.magnitudes < epsilon
        counts = cut.sum(axis=1)
        ratios = np.zeros(self.n_tokens, dtype=np.float64)
        ratios[counts == cut.shape[1]] = 1.0
        partial = np.flatnonzero((counts > 0) & (counts < cut.shape[1]))
        if partial.size:
            numerators = np.linalg.norm(self._project(np.where(cut[partial], self.gates[partial], 0.0)), axis=1)
            ratios[partial] = numerators / self.denominators[partial]
        return ratios

    def mean(self, epsilon: float) -> float:
        return float(np.mean(self.ratios(epsilon)))

    def summary(self, epsilon: float) -> CettSummary:
        ratios = self.ratios(epsilon)
        return CettSummary(
            layer=self.layer,
            epsilon=float(epsilon),
            mean_cett=float(np.mean(ratios)),
            n_tokens=self.n_tokens,
            n_degenerate=self.n_degenerate,
            mean_cut_size=float((self.magnitudes < epsilon).sum(axis=1).mean()),
        )


def cett(model: ModelWeights, layer: int, x: np.ndarray, epsilon: float) -> CettReport:
    """CETT of one hidden state: ||sum of n_j with A_j < epsilon|| / ||MLP(x)||.

    Raises:
        DegenerateDenominatorError: If ||MLP(x)|| is below the degenerate bound.
    """
    x = _check_state(model, x)
    if x.ndim != 1:
        raise DimensionError(f"expected one hidden state, got shape {x.shape}")
    try:
        evaluator = CettEvaluator(model, layer, x[None, :])
    except InsufficientDataError as e:
        raise DegenerateDenominatorError(f"layer {layer}: MLP output norm below {settings.DEGENERATE_NORM}") from e
    return CettReport(
        layer=layer,
        epsilon=float(epsilon),
        cett=float(evaluator.ratios(epsilon)[0]),
        cut_set_size=int((evaluator.magnitudes[0] < epsilon).sum()),
        denominator=float(evaluator.denominators[0]),
    )


def mean_cett_report(
    model: ModelWeights, layer: int, sample: Sequence[Sequence[int] | np.ndarray], epsilon: float
) -> CettSummary:
    return CettEvaluator(model, layer, mlp_states(model, layer, sample)).summary(epsilon)


def mean_cett(model: ModelWeights, layer: int, sample: Sequence[Sequence[int] | np.ndarray], epsilon: float) -> float:
    """Arithmetic mean of per-token CETT over every non-degenerate token of `sample`.

    Raises:
        EmptyInputError: If the sample holds no tokens.
        InsufficientDataError: If every token is degenerate.
    """
    return mean_cett_report(model, layer, sample, epsilon).mean_cett


def dump_magnitudes(mags: Sequence[NeuronMagnitudes], path: str | Path) -> Path:
    frames = [
        pd.DataFrame(
            {
                "layer": m.layer,
                "neuron": np.arange(m.d_h),
                "value": m.values.astype(np.float64),
                "aggregation": m.aggregation.value,
            }
        )
        for m in mags
    ]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=list(MAGNITUDE_COLUMNS))
    path = Path(path)
    frame[list(MAGNITUDE_COLUMNS)].to_csv(path, index=False)
    return path
