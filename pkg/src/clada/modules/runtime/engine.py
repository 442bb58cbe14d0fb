import logging
import time
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel

from clada.core.exceptions import ContextLengthError, DimensionError
from clada.modules.activation.meter import Aggregation, NeuronMagnitudes, aggregate, build_mask
from clada.modules.cogload.metrics import normalize, signal_from_logits
from clada.modules.model.transformer import FlopCounter, KVCache, SparseMLP, run_blocks
from clada.modules.model.weights import ModelWeights
from clada.modules.runtime.modes import (
    ModeKind,
    RuntimeMode,
    modulation,
    static_mask,
    top_p_for_multiplier,
)
from clada.modules.threshold.policy import ThresholdPolicy

MagnitudeSource = Literal["prefill", "lagged"]

# Gathered weight sets kept per layer before the cache is reset.
PLAN_CACHE_SIZE = 64


class GenerationStats(BaseModel):
    """Counters of one generate call; sparsity is averaged over decode steps."""

    mode: str
    batch_size: int = 1
    tokens_generated: int
    decode_steps: int
    layer_sparsity: list[float]
    mean_sparsity: float
    wall_time_s: float
    prefill_time_s: float
    fires_s: int
    fires_h: int
    mlp_macs: int
    dense_mlp_macs: int
    decode: Literal["greedy"] = "greedy"

    @property
    def indicator_fire_rate_s(self) -> float:
        return self.fires_s / max(self.decode_steps * self.batch_size, 1)

    @property
    def indicator_fire_rate_h(self) -> float:
        return self.fires_h / max(self.decode_steps * self.batch_size, 1)


@dataclass
class PrefillState:
    """Result of the dense prompt pass for a batch of streams.

    Attributes:
        magnitudes: [streams x layers x d_h] aggregated prompt magnitudes.
        masks: [streams x layers x d_h] masks at tau_base.
        logits: [streams x vocab] logits of the last prompt position.
        surprisal_history: Per-stream raw surprisal of prompt tokens 1..T-1.
        entropy_history: Per-stream raw entropy at prompt positions 0..T-2.
    """

    magnitudes: np.ndarray
    masks: np.ndarray
    cache: KVCache
    logits: np.ndarray
    surprisal_history: list[list[float]]
    entropy_history: list[list[float]]
    aggregation: Aggregation
    prompt_len: int
    prefill_time_s: float = 0.0
    per_token: list[np.ndarray] = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return int(self.magnitudes.shape[0])

    def layer_magnitudes(self, layer: int, stream: int = 0) -> NeuronMagnitudes:
        return NeuronMagnitudes(
            layer=layer,
            values=self.magnitudes[stream, layer],
            aggregation=self.aggregation,
            source_positions=(0, self.prompt_len),
            per_token=self.per_token[layer][stream] if self.per_token else None,
        )


class CladaEngine:
    """Greedy decoder that regenerates per-layer MLP masks every step.

    Each decode step scores the previous token's surprisal and entropy, scales every
    layer's tau_base by the load multiplier, thresholds the prefill magnitudes and
    runs the step through only the kept neurons. Batched streams share one forward
    per step and compute the union of their masks.
    """

    def __init__(
        self,
        model: ModelWeights,
        policy: ThresholdPolicy,
        mode: RuntimeMode | str = "clada_full",
        magnitude_source: MagnitudeSource = "prefill",
    ):
        self.logger = logging.getLogger(__name__)
        if policy.n_layers != model.dims.n_layers:
            raise DimensionError(f"policy has {policy.n_layers} layers, model has {model.dims.n_layers}")
        self.model = model
        self.policy = policy
        self.mode = mode if isinstance(mode, RuntimeMode) else RuntimeMode.parse(mode)
        self.magnitude_source = magnitude_source
        self._plans: list[dict[bytes, SparseMLP]] = [{} for _ in range(model.dims.n_layers)]

    def _check_lengths(self, prompt_len: int, max_new: int) -> None:
        if max_new < 1:
            raise ValueError(f"max_new must be >= 1, got {max_new}")
        if prompt_len < 1:
            raise ContextLengthError("prompt must hold at least one token")
        if prompt_len + max_new - 1 > self.model.dims.max_ctx:
            raise ContextLengthError(
                f"prompt of {prompt_len} plus {max_new} new tokens exceeds max_ctx={self.model.dims.max_ctx}"
            )

    def prefill(self, prompts: np.ndarray, capacity: int | None = None) -> PrefillState:
        """Dense pass over [streams x T] prompts recording magnitudes, masks and the cache."""
        prompts = np.atleast_2d(np.asarray(prompts, dtype=np.int64))
        batch, steps = prompts.shape
        d = self.model.dims
        cache = KVCache.for_model(self.model, batch, capacity or steps)
        per_token: list[np.ndarray] = [np.empty(0)] * d.n_layers

        def hook(index: int, _mlp_in: np.ndarray, gates: np.ndarray, _out: np.ndarray, _indices) -> None:
            per_token[index] = np.abs(gates) * self.model.layers[index].w_out_col_norms

        started = time.perf_counter()
        logits = run_blocks(self.model, prompts, cache=cache, hook=hook)
        elapsed = time.perf_counter() - started

        aggregation = self.policy.aggregation
        magnitudes = np.stack(
            [np.stack([aggregate(per_token[layer][b], aggregation) for layer in range(d.n_layers)]) for b in range(batch)]
        )
        taus = np.asarray(self.policy.tau_bases(), dtype=np.float64)
        masks = magnitudes >= taus[None, :, None]

        surprisals, entropies = [], []
        for b in range(batch):
            s, h = signal_from_logits(logits[b, :-1], prompts[b, 1:]) if steps > 1 else (np.empty(0), np.empty(0))
            surprisals.append(list(s))
            entropies.append(list(h))

        return PrefillState(
            magnitudes=magnitudes,
            masks=masks,
            cache=cache,
            logits=logits[:, -1],
            surprisal_history=surprisals,
            entropy_history=entropies,
            aggregation=aggregation,
            prompt_len=steps,
            prefill_time_s=elapsed,
            per_token=per_token,
        )

    def _indicators(self, state: PrefillState, stream: int, s: float, h: float) -> tuple[bool, bool]:
        state.surprisal_history[stream].append(s)
        state.entropy_history[stream].append(h)
        if self.policy.signal_scale == "raw":
            value_s, value_h = s, h
        else:
            value_s = float(normalize(state.surprisal_history[stream])[-1])
            value_h = float(normalize(state.entropy_history[stream])[-1])
        return value_s > self.policy.tau_s, value_h > self.policy.tau_h

    def _stream_masks(self, state: PrefillState, stream: int, fires_s: bool, fires_h: bool) -> np.ndarray:
        magnitudes = state.magnitudes[stream]
        kind = self.mode.kind
        if kind == ModeKind.DENSE:
            return np.ones_like(magnitudes, dtype=bool)
        if self.mode.is_static:
            return self._static_masks[stream]

        masks = np.empty_like(magnitudes, dtype=bool)
        sign = self.policy.modulation_sign
        for layer, entry in enumerate(self.policy.layers):
            if kind == ModeKind.CLADA_NO_SEMANTIC:
                multiplier = 1.0
            else:
                multiplier = modulation(entry.lambda_, entry.gamma, fires_s, fires_h, sign)
            if kind == ModeKind.CLADA_NO_STATISTICAL:
                top_p = RuntimeMode(kind=ModeKind.TOP_P, p=top_p_for_multiplier(multiplier))
                masks[layer] = static_mask(magnitudes[layer], top_p)
            else:
                masks[layer], _ = build_mask(magnitudes[layer], entry.tau_base * multiplier)
        return masks

    def _plan(self, layer: int, mask: np.ndarray) -> SparseMLP | None:
        if mask.all():
            return None
        plans = self._plans[layer]
        key = np.packbits(mask).tobytes()
        plan = plans.get(key)
        if plan is None:
            if len(plans) >= PLAN_CACHE_SIZE:
                plans.clear()
            plan = plans[key] = SparseMLP.from_mask(self.model.layers[layer], mask)
        return plan

    def decode(
        self, state: PrefillState, max_new: int, forced: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray, GenerationStats]:
        """Greedy decode `max_new` tokens per stream after a prefill.

        With `forced` [streams x max_new] the fed tokens follow it instead of the argmax,
        which keeps every mode on the same trajectory.

        Returns:
            Fed tokens and argmax predictions, both [streams x max_new], and the stats.
        """
        d = self.model.dims
        batch = state.batch_size
        self._check_lengths(state.prompt_len, max_new)
        self._static_masks = self._initial_masks(state)

        counter = FlopCounter()
        predicted = np.empty((batch, max_new), dtype=np.int64)
        fed = np.empty((batch, max_new), dtype=np.int64)
        predicted[:, 0] = np.argmax(state.logits, axis=-1)
        fed[:, 0] = predicted[:, 0] if forced is None else forced[:, 0]
        logits = state.logits
        sparsity_sum = np.zeros(d.n_layers, dtype=np.float64)
        fires_s = fires_h = 0
        lagged = self.magnitude_source == "lagged"

        started = time.perf_counter()
        for step in range(1, max_new):
            surprisals, entropies = signal_from_logits(logits, fed[:, step - 1])
            union = np.zeros((d.n_layers, d.d_h), dtype=bool)
            for b in range(batch):
                fire_s, fire_h = self._indicators(state, b, float(surprisals[b]), float(entropies[b]))
                fires_s += fire_s
                fires_h += fire_h
                union |= self._stream_masks(state, b, fire_s, fire_h)

            plans = [self._plan(layer, union[layer]) for layer in range(d.n_layers)]
            sparsity_sum += 1.0 - union.sum(axis=1) / d.d_h
            hook = self._lagged_hook(state) if lagged else None
            logits = run_blocks(self.model, fed[:, step - 1 : step], cache=state.cache, plans=plans, hook=hook, counter=counter)[:, 0]
            predicted[:, step] = np.argmax(logits, axis=-1)
            fed[:, step] = predicted[:, step] if forced is None else forced[:, step]
        wall_time = time.perf_counter() - started

        steps = max_new - 1
        if steps:
            layer_sparsity = sparsity_sum / steps
        else:
            layer_sparsity = 1.0 - self._initial_masks(state).any(axis=0).mean(axis=1)
        stats = GenerationStats(
            mode=self.mode.label,
            batch_size=batch,
            tokens_generated=max_new,
            decode_steps=steps,
            layer_sparsity=[float(v) for v in layer_sparsity],
            mean_sparsity=float(np.mean(layer_sparsity)),
            wall_time_s=wall_time,
            prefill_time_s=state.prefill_time_s,
            fires_s=int(fires_s),
            fires_h=int(fires_h),
            mlp_macs=counter.mlp_macs,
            dense_mlp_macs=counter.dense_mlp_macs,
        )
        self.logger.debug(f"{self.mode.label}: {max_new} tokens x {batch} streams, sparsity {stats.mean_sparsity:.3f}")
        return fed, predicted, stats

    def _initial_masks(self, state: PrefillState) -> np.ndarray:
        """Per-stream masks before any indicator fires; static modes keep these for the whole run."""
        masks = np.empty_like(state.magnitudes, dtype=bool)
        for b in range(state.batch_size):
            if self.mode.is_static:
                masks[b] = [static_mask(state.magnitudes[b, layer], self.mode) for layer in range(masks.shape[1])]
            else:
                masks[b] = self._stream_masks(state, b, False, False)
        return masks

    def _lagged_hook(self, state: PrefillState):
        def hook(index: int, _mlp_in: np.ndarray, gates: np.ndarray, _out: np.ndarray, indices: np.ndarray | None) -> None:
            norms = self.model.layers[index].w_out_col_norms
            if indices is None:
                state.magnitudes[:, index] = np.abs(gates[:, 0]) * norms
            elif indices.size:
                state.magnitudes[:, index, indices] = np.abs(gates[:, 0]) * norms[indices]

        return hook

    def generate(self, prompt: Sequence[int] | np.ndarray, max_new: int) -> tuple[list[int], GenerationStats]:
        prompt = np.asarray(prompt, dtype=np.int64)
        self._check_lengths(prompt.size, max_new)
        state = self.prefill(prompt[None, :], capacity=prompt.size + max_new)
        tokens, _, stats = self.decode(state, max_new)
        return [int(t) for t in tokens[0]], stats

    def generate_batch(self, prompts: np.ndarray, max_new: int) -> tuple[np.ndarray, GenerationStats]:
        """Decode equal-length prompts [streams x T] together."""
        prompts = np.atleast_2d(np.asarray(prompts, dtype=np.int64))
        self._check_lengths(prompts.shape[1], max_new)
        state = self.prefill(prompts, capacity=prompts.shape[1] + max_new)
        tokens, _, stats = self.decode(state, max_new)
        return tokens, stats


def prefill(model: ModelWeights, prompt: Sequence[int] | np.ndarray, policy: ThresholdPolicy) -> PrefillState:
    """Dense prompt pass; masks are build_mask(magnitudes, tau_base) per layer.

    Raises:
        ContextLengthError: If the prompt is empty or longer than max_ctx.
    """
    prompt = np.asarray(prompt, dtype=np.int64)
    if prompt.size < 1:
        raise ContextLengthError("prompt must hold at least one token")
    return CladaEngine(model, policy, "clada_full").prefill(prompt[None, :])


def generate(
    model: ModelWeights,
    prompt: Sequence[int] | np.ndarray,
    policy: ThresholdPolicy,
    mode: RuntimeMode | str = "clada_full",
    max_new: int = 64,
    magnitude_source: MagnitudeSource = "prefill",
) -> tuple[list[int], GenerationStats]:
    """Greedy generation of `max_new` tokens under a runtime mode.

    Raises:
        ContextLengthError: If prompt + max_new - 1 exceeds max_ctx.
        DimensionError: If the policy and model disagree on the layer count.
    """
    return CladaEngine(model, policy, mode, magnitude_source).generate(prompt, max_new)
