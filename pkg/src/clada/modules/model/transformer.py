"""Deterministic float32 CPU forward pass.

Pre-norm decoder blocks with rotary causal self-attention and a gated MLP

    MLP(x) = W_out . (sigma(W_in x) * (V_in x))

The MLP hidden values g = sigma(W_in x) * (V_in x) are called gates below; neuron
j contributes n_j = g_j * W_out[:, j] and has magnitude A_j = |g_j| * ||W_out[:, j]||.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

from clada.core.exceptions import ContextLengthError, DimensionError, PositionError, TokenRangeError
from clada.modules.model.weights import ActivationFn, LayerWeights, ModelWeights
from clada.settings import settings

logger = logging.getLogger(__name__)

MlpHook = Callable[[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray | None], None]


def activate(values: np.ndarray, fn: ActivationFn) -> np.ndarray:
    if fn == ActivationFn.SILU:
        out = values * expit(values)
    elif fn == ActivationFn.RELU:
        out = np.maximum(values, 0.0)
    else:
        out = 0.5 * values * (1.0 + erf(values / math.sqrt(2.0)))
    return out.astype(np.float32, copy=False)


def rms_norm(x: np.ndarray, weight: np.ndarray, eps: float | None = None) -> np.ndarray:
    eps = settings.NORM_EPS if eps is None else eps
    scale = 1.0 / np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + eps)
    return (x * scale * weight).astype(np.float32, copy=False)


@lru_cache(maxsize=16)
def rotary_tables(head_dim: int, max_ctx: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    """Cos/sin tables [max_ctx x head_dim // 2] for interleaved rotary pairs."""
    half = head_dim // 2
    inv_freq = base ** (-np.arange(half, dtype=np.float64) * 2.0 / head_dim)
    angles = np.outer(np.arange(max_ctx, dtype=np.float64), inv_freq)
    cos, sin = np.cos(angles).astype(np.float32), np.sin(angles).astype(np.float32)
    cos.flags.writeable = False
    sin.flags.writeable = False
    return cos, sin


def apply_rotary(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    half = cos.shape[-1]
    if half == 0:
        return x
    even = x[..., 0 : 2 * half : 2]
    odd = x[..., 1 : 2 * half : 2]
    out = x.copy()
    out[..., 0 : 2 * half : 2] = even * cos - odd * sin
    out[..., 1 : 2 * half : 2] = even * sin + odd * cos
    return out


def mlp_gates(layer: LayerWeights, x: np.ndarray, fn: ActivationFn) -> np.ndarray:
    return activate(x @ layer.w_in.T, fn) * (x @ layer.v_in.T)


def mlp_dense(layer: LayerWeights, x: np.ndarray, fn: ActivationFn) -> tuple[np.ndarray, np.ndarray]:
    gates = mlp_gates(layer, x, fn)
    return gates, gates @ layer.w_out_t


@dataclass(frozen=True, eq=False)
class SparseMLP:
    """MLP restricted to the active neurons of a mask.

    The active rows are gathered once into contiguous matrices so a masked pass
    does proportionally less work instead of multiplying by zero.
    """

    indices: np.ndarray
    w_in: np.ndarray
    v_in: np.ndarray
    w_out_t: np.ndarray

    @classmethod
    def from_mask(cls, layer: LayerWeights, mask: np.ndarray) -> "SparseMLP":
        indices = np.flatnonzero(mask)
        return cls(
            indices=indices,
            w_in=np.ascontiguousarray(layer.w_in[indices]),
            v_in=np.ascontiguousarray(layer.v_in[indices]),
            w_out_t=np.ascontiguousarray(layer.w_out_t[indices]),
        )

    @property
    def active(self) -> int:
        return int(self.indices.size)

    def __call__(self, x: np.ndarray, fn: ActivationFn) -> tuple[np.ndarray, np.ndarray]:
        gates = activate(x @ self.w_in.T, fn) * (x @ self.v_in.T)
        return gates, gates @ self.w_out_t


@dataclass
class FlopCounter:
    """Counts MLP multiply-accumulates actually executed versus a dense pass."""

    mlp_macs: int = 0
    dense_mlp_macs: int = 0

    def record(self, rows: int, active: int, d_h: int, d_model: int) -> None:
        self.mlp_macs += 3 * rows * active * d_model
        self.dense_mlp_macs += 3 * rows * d_h * d_model

    @property
    def ratio(self) -> float:
        return self.mlp_macs / self.dense_mlp_macs if self.dense_mlp_macs else 0.0


class KVCache:
    """Growable per-layer key/value store for incremental decoding of a batch of streams."""

    def __init__(self, n_layers: int, batch: int, n_heads: int, head_dim: int, capacity: int = 64):
        self.shape = (batch, n_heads, max(capacity, 1), head_dim)
        self.keys = [np.zeros(self.shape, dtype=np.float32) for _ in range(n_layers)]
        self.values = [np.zeros(self.shape, dtype=np.float32) for _ in range(n_layers)]
        self.length = 0

    @classmethod
    def for_model(cls, model: ModelWeights, batch: int, capacity: int = 64) -> "KVCache":
        d = model.dims
        return cls(d.n_layers, batch, d.n_heads, d.head_dim, capacity)

    def store(self, layer: int, start: int, k: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        end = start + k.shape[2]
        if end > self.keys[layer].shape[2]:
            self._grow(layer, end)
        self.keys[layer][:, :, start:end] = k
        self.values[layer][:, :, start:end] = v
        return self.keys[layer][:, :, :end], self.values[layer][:, :, :end]

    def _grow(self, layer: int, needed: int) -> None:
        capacity = self.keys[layer].shape[2]
        while capacity < needed:
            capacity *= 2
        for store in (self.keys, self.values):
            grown = np.zeros((*self.shape[:2], capacity, self.shape[3]), dtype=np.float32)
            grown[:, :, : store[layer].shape[2]] = store[layer]
            store[layer] = grown


def _attention(
    layer: LayerWeights,
    x: np.ndarray,
    layer_index: int,
    start: int,
    cache: KVCache | None,
    cos: np.ndarray,
    sin: np.ndarray,
    n_heads: int,
) -> np.ndarray:
    batch, steps, d_model = x.shape
    head_dim = d_model // n_heads

    def heads(projection: np.ndarray) -> np.ndarray:
        return (x @ projection.T).reshape(batch, steps, n_heads, head_dim).transpose(0, 2, 1, 3)

    q = apply_rotary(heads(layer.wq), cos, sin)
    k = apply_rotary(heads(layer.wk), cos, sin)
    v = heads(layer.wv)
    if cache is not None:
        k, v = cache.store(layer_index, start, k, v)

    scores = (q @ k.transpose(0, 1, 3, 2)) * np.float32(1.0 / math.sqrt(head_dim))
    span = k.shape[2]
    future = np.arange(span)[None, :] > (start + np.arange(steps))[:, None]
    if future.any():
        scores = np.where(future, np.float32(-np.inf), scores)
    scores = scores - scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    context = (probs @ v).transpose(0, 2, 1, 3).reshape(batch, steps, d_model)
    return context @ layer.wo.T


def check_tokens(model: ModelWeights, tokens: Sequence[int] | np.ndarray, offset: int = 0) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    steps = ids.shape[-1]
    if steps < 1:
        raise ContextLengthError("forward pass needs at least one token")
    if offset + steps > model.dims.max_ctx:
        raise ContextLengthError(f"{offset + steps} tokens exceed max_ctx={model.dims.max_ctx}")
    if ids.min() < 0 or ids.max() >= model.dims.vocab_size:
        bad = int(ids[(ids < 0) | (ids >= model.dims.vocab_size)][0])
        raise TokenRangeError(f"token id {bad} outside vocabulary of size {model.dims.vocab_size}")
    return ids


def run_blocks(
    model: ModelWeights,
    ids: np.ndarray,
    cache: KVCache | None = None,
    plans: Sequence[SparseMLP | None] | None = None,
    hook: MlpHook | None = None,
    counter: FlopCounter | None = None,
) -> np.ndarray:
    """Run the decoder over `ids` [batch x steps] and return logits [batch x steps x vocab].

    With a cache the tokens are placed after the cached positions. `plans[l]` set to a
    SparseMLP replaces layer l's dense MLP; `hook` sees (layer, mlp_input, gates,
    mlp_output, active_indices) for every MLP evaluation, with indices None on the
    dense path and gates restricted to the active neurons otherwise.
    """
    d = model.dims
    start = cache.length if cache is not None else 0
    ids = check_tokens(model, ids, offset=start)
    batch, steps = ids.shape
    cos, sin = rotary_tables(d.head_dim, d.max_ctx, settings.ROPE_BASE)
    cos, sin = cos[start : start + steps], sin[start : start + steps]

    hidden = model.token_embedding[ids]
    for index, layer in enumerate(model.layers):
        attn_in = rms_norm(hidden, layer.attn_norm)
        hidden = hidden + _attention(layer, attn_in, index, start, cache, cos, sin, d.n_heads)
        mlp_in = rms_norm(hidden, layer.mlp_norm)
        plan = plans[index] if plans is not None else None
        if plan is None:
            gates, mlp_out = mlp_dense(layer, mlp_in, model.activation_fn)
            active = d.d_h
        else:
            gates, mlp_out = plan(mlp_in, model.activation_fn)
            active = plan.active
        if hook is not None:
            hook(index, mlp_in, gates, mlp_out, None if plan is None else plan.indices)
        if counter is not None:
            counter.record(batch * steps, active, d.d_h, d.d_model)
        hidden = hidden + mlp_out

    if cache is not None:
        cache.length += steps
    return rms_norm(hidden, model.final_norm) @ model.lm_head.T


@dataclass(frozen=True)
class TraceConfig:
    """Which layers and positions to trace; None means all of them."""

    layers: tuple[int, ...] | None = None
    positions: tuple[int, ...] | None = None
    retain_contributions: bool = False


@dataclass
class LayerTrace:
    layer: int
    positions: np.ndarray
    mlp_input: np.ndarray
    gates: np.ndarray
    magnitudes: np.ndarray
    mlp_output: np.ndarray
    contributions: dict[int, np.ndarray] = field(default_factory=dict)

    def row(self, position: int) -> int:
        hits = np.flatnonzero(self.positions == position)
        if hits.size == 0:
            raise KeyError(f"position {position} was not traced for layer {self.layer}")
        return int(hits[0])


@dataclass
class ActivationTrace:
    """Per-layer MLP activity captured during a forward pass.

    `contributions[t]` is the d_h x d_model matrix whose row j is n_j at position t.
    """

    layers: dict[int, LayerTrace] = field(default_factory=dict)

    def __getitem__(self, layer: int) -> LayerTrace:
        return self.layers[layer]

    def __contains__(self, layer: int) -> bool:
        return layer in self.layers


def contribution_matrix(layer: LayerWeights, gates: np.ndarray) -> np.ndarray:
    return (gates[:, None] * layer.w_out_t).astype(np.float32, copy=False)


def forward(
    model: ModelWeights, tokens: Sequence[int] | np.ndarray, trace_cfg: TraceConfig | None = None
) -> tuple[np.ndarray, ActivationTrace]:
    """Dense forward pass over one sequence.

    Returns:
        Logits [T x vocab_size] and the activation trace selected by `trace_cfg`
        (empty when `trace_cfg` is None).

    Raises:
        ContextLengthError: If the sequence is empty or longer than max_ctx.
        TokenRangeError: If a token id is outside the vocabulary.
        PositionError: If a traced position is outside the sequence.
    """
    ids = check_tokens(model, tokens)
    trace = ActivationTrace()
    hook = None
    if trace_cfg is not None:
        if trace_cfg.positions is not None:
            outside = [p for p in trace_cfg.positions if not 0 <= p < ids.shape[1]]
            if outside:
                raise PositionError(f"trace positions {outside} outside 0..{ids.shape[1] - 1}")
        layers = range(model.dims.n_layers) if trace_cfg.layers is None else trace_cfg.layers
        for index in layers:
            model.layer(index)
        wanted = set(layers)

        def hook(
            index: int, mlp_in: np.ndarray, gates: np.ndarray, mlp_out: np.ndarray, _indices: np.ndarray | None
        ) -> None:
            if index not in wanted:
                return
            steps = gates.shape[1]
            positions = np.arange(steps) if trace_cfg.positions is None else np.asarray(trace_cfg.positions, dtype=np.int64)
            layer = model.layers[index]
            rows = gates[0, positions]
            record = LayerTrace(
                layer=index,
                positions=positions,
                mlp_input=mlp_in[0, positions],
                gates=rows,
                magnitudes=np.abs(rows) * layer.w_out_col_norms,
                mlp_output=mlp_out[0, positions],
            )
            if trace_cfg.retain_contributions:
                record.contributions = {int(p): contribution_matrix(layer, rows[i]) for i, p in enumerate(positions)}
            trace.layers[index] = record

    logits = run_blocks(model, ids, hook=hook)
    return logits[0], trace


def _plans_for_masks(model: ModelWeights, masks: Sequence[np.ndarray]) -> list[SparseMLP | None]:
    if len(masks) != model.dims.n_layers:
        raise DimensionError(f"expected {model.dims.n_layers} masks, got {len(masks)}")
    plans: list[SparseMLP | None] = []
    for index, mask in enumerate(masks):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (model.dims.d_h,):
            raise DimensionError(f"mask for layer {index} has shape {mask.shape}, expected ({model.dims.d_h},)")
        plans.append(None if mask.all() else SparseMLP.from_mask(model.layers[index], mask))
    return plans


def forward_masked(
    model: ModelWeights,
    tokens: Sequence[int] | np.ndarray,
    masks: Sequence[np.ndarray],
    counter: FlopCounter | None = None,
) -> np.ndarray:
    """Forward pass computing only the neurons each layer's mask keeps.

    An all-true mask takes the dense path, so it reproduces forward() bit for bit.

    Raises:
        DimensionError: If the number or length of masks does not match the model.
    """
    plans = _plans_for_masks(model, masks)
    return run_blocks(model, check_tokens(model, tokens), plans=plans, counter=counter)[0]
