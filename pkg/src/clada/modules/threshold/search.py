import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
from pydantic import BaseModel

from clada.core.exceptions import InsufficientDataError
from clada.modules.activation.meter import Aggregation, CettEvaluator, build_mask, sample_states
from clada.modules.cogload.metrics import calibrate_thresholds, corpus_signals
from clada.modules.model.weights import ModelWeights
from clada.modules.threshold.policy import LayerPolicy, SearchConfig, ThresholdPolicy
from clada.settings import settings

logger = logging.getLogger(__name__)


class LayerSearchResult(BaseModel):
    """Outcome of one layer's threshold search on the validation sample.

    `next_cett` is the mean CETT one resolution step above `tau_base`.
    """

    layer: int
    method: str
    tau_base: float
    resolution: float
    achieved_cett: float
    next_cett: float
    achieved_sparsity: float
    n_tokens: int
    n_degenerate: int


def _bisection(evaluator: CettEvaluator, budget: float, iters: int) -> tuple[float, float, float]:
    """Largest feasible epsilon in [0, nextafter(max A)] by bisection.

    Keeps `lo` feasible and `hi` infeasible, so the returned threshold always meets
    the budget and one step above it does not.

    Returns:
        (tau, resolution, cett at tau + resolution)
    """
    top = float(np.nextafter(evaluator.max_magnitude, np.inf))
    top_cett = evaluator.mean(top)
    if top_cett <= budget:
        return top, 0.0, top_cett

    lo, hi, hi_cett = 0.0, top, top_cett
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        value = evaluator.mean(mid)
        if value <= budget:
            lo = mid
        else:
            hi, hi_cett = mid, value
    return lo, hi - lo, hi_cett


def _grid(evaluator: CettEvaluator, budget: float, cells: int) -> tuple[float, float, float]:
    """Largest candidate from an A_j quantile grid before the first infeasible one."""
    top = float(np.nextafter(evaluator.max_magnitude, np.inf))
    quantiles = np.quantile(evaluator.magnitudes.ravel(), np.linspace(0.0, 1.0, cells + 1))
    candidates = np.unique(np.concatenate([[0.0], quantiles, [top]]))

    best = 0
    for index in range(1, candidates.size):
        if evaluator.mean(float(candidates[index])) > budget:
            break
        best = index
    tau = float(candidates[best])
    if best == candidates.size - 1:
        return tau, 0.0, evaluator.mean(tau)
    upper = float(candidates[best + 1])
    return tau, upper - tau, evaluator.mean(upper)


def _search_states(
    model: ModelWeights, layer: int, states: np.ndarray, cfg: SearchConfig
) -> LayerSearchResult:
    evaluator = CettEvaluator(model, layer, states)
    if cfg.method == "grid":
        tau, resolution, next_cett = _grid(evaluator, cfg.cett_budget, cfg.grid)
    else:
        tau, resolution, next_cett = _bisection(evaluator, cfg.cett_budget, cfg.bisection_iters)

    _, sparsity = build_mask(evaluator.magnitudes.mean(axis=0), tau)
    result = LayerSearchResult(
        layer=layer,
        method=cfg.method,
        tau_base=tau,
        resolution=resolution,
        achieved_cett=evaluator.mean(tau),
        next_cett=next_cett,
        achieved_sparsity=sparsity,
        n_tokens=evaluator.n_tokens,
        n_degenerate=evaluator.n_degenerate,
    )
    logger.info(
        f"Layer {layer}: tau_base={tau:.6g} cett={result.achieved_cett:.4f} sparsity={sparsity:.3f} ({cfg.method})"
    )
    return result


def search_layer(
    model: ModelWeights,
    layer: int,
    sample: Sequence[Sequence[int] | np.ndarray],
    cfg: SearchConfig | None = None,
) -> tuple[float, LayerSearchResult]:
    """Largest epsilon whose mean CETT over the sample stays within the budget.

    Raises:
        EmptyInputError: If the sample holds no tokens.
        InsufficientDataError: If every token of the sample is degenerate.
    """
    cfg = cfg or SearchConfig()
    states = sample_states(model, [layer], sample)[layer]
    result = _search_states(model, layer, states, cfg)
    return result.tau_base, result


def search_all(
    model: ModelWeights,
    sample: Sequence[Sequence[int] | np.ndarray],
    cfg: SearchConfig | None = None,
    lambdas: Sequence[float] | float | None = None,
    gammas: Sequence[float] | float | None = None,
    tau_s: float | None = None,
    tau_h: float | None = None,
    signal_scale: str = "normalized",
    modulation_sign: int = 1,
    aggregation: Aggregation | str = Aggregation.MEAN,
    dval: str | None = None,
) -> ThresholdPolicy:
    """Search every layer and assemble a ThresholdPolicy.

    Layers run on a thread pool sized by CLADA_THREADS; each layer's search only
    depends on the sample, so the result does not depend on scheduling. tau_s and
    tau_H are calibrated from the sample's cognitive signals when not given.

    Raises:
        CladaError: A layer failure, re-raised with the layer index in the message.
    """
    cfg = cfg or SearchConfig()
    n_layers = model.dims.n_layers
    layers = list(range(n_layers))
    states = sample_states(model, layers, sample)

    def run(layer: int) -> LayerSearchResult:
        try:
            return _search_states(model, layer, states[layer], cfg)
        except InsufficientDataError as e:
            logger.exception(f"Threshold search failed on layer {layer}")
            raise type(e)(f"layer {layer}: {e}") from e

    with ThreadPoolExecutor(max_workers=min(settings.worker_count, n_layers)) as pool:
        results = list(pool.map(run, layers))

    if tau_s is None or tau_h is None:
        calibrated_s, calibrated_h = calibrate_thresholds(corpus_signals(model, sample), scale=signal_scale)
        tau_s = calibrated_s if tau_s is None else tau_s
        tau_h = calibrated_h if tau_h is None else tau_h

    def per_layer(values: Sequence[float] | float | None, default: float) -> list[float]:
        if values is None:
            return [default] * n_layers
        if isinstance(values, (int, float)):
            return [float(values)] * n_layers
        if len(values) != n_layers:
            raise ValueError(f"expected {n_layers} per-layer values, got {len(values)}")
        return [float(v) for v in values]

    lambda_values = per_layer(lambdas, settings.DEFAULT_LAMBDA)
    gamma_values = per_layer(gammas, settings.DEFAULT_GAMMA)
    return ThresholdPolicy(
        cett_budget=cfg.cett_budget,
        tau_s=tau_s,
        tau_h=tau_h,
        signal_scale=signal_scale,
        modulation_sign=modulation_sign,
        aggregation=Aggregation(aggregation),
        layers=[
            LayerPolicy(
                tau_base=r.tau_base,
                lambda_=lambda_values[r.layer],
                gamma=gamma_values[r.layer],
                achieved_cett=r.achieved_cett,
                achieved_sparsity=r.achieved_sparsity,
            )
            for r in results
        ],
        meta={
            "search_config": cfg.model_dump(),
            "search_config_sha256": cfg.digest(),
            "corpus_id": cfg.corpus_id,
            "validation_sample": dval or f"{sum(len(s) for s in sample)} tokens in {len(sample)} sequences",
            "resolution": [r.resolution for r in results],
            "n_degenerate": [r.n_degenerate for r in results],
        },
    )
