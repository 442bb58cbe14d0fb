import itertools
import logging
from typing import Sequence

import numpy as np
from pydantic import BaseModel, Field

from clada.core.constants import BYTE_VOCAB
from clada.core.exceptions import GridError
from clada.modules.model.weights import ModelDims, ModelWeights
from clada.modules.runtime.engine import CladaEngine
from clada.modules.runtime.modes import RuntimeMode
from clada.modules.threshold.policy import ThresholdPolicy
from clada.settings import settings

logger = logging.getLogger(__name__)

GRID_KEYS = ("prompt", "gen", "batch")

# Floor for a timed generation loop, keeps speedups finite on empty loops.
MIN_WALL_TIME_S = 1e-9


class BenchResult(BaseModel):
    mode: str
    prompt_len: int
    gen_len: int
    batch_size: int
    wall_time_s: float = Field(gt=0)
    speedup_vs_dense: float
    mean_sparsity: float
    prefill_time_s: float
    cv: float
    dims: ModelDims


def parse_grid(spec: str | Sequence[str]) -> list[tuple[int, int, int]]:
    """Expand "prompt=256,512 gen=256 batch=1,4" into (prompt, gen, batch) cells.

    Missing keys default to batch 1; prompt and gen are required.
    """
    parts = spec.split() if isinstance(spec, str) else [p for item in spec for p in item.split()]
    values: dict[str, list[int]] = {}
    for part in parts:
        key, sep, raw = part.partition("=")
        if not sep or key not in GRID_KEYS:
            raise GridError(f"bad grid entry {part!r}, expected one of {', '.join(k + '=...' for k in GRID_KEYS)}")
        try:
            values[key] = [int(v) for v in raw.split(",") if v]
        except ValueError as e:
            raise GridError(f"grid entry {part!r} holds a non-integer value") from e
        if not values[key] or min(values[key]) < 1:
            raise GridError(f"grid entry {part!r} needs positive integers")
    for key in ("prompt", "gen"):
        if key not in values:
            raise GridError(f"grid lacks {key}=...")
    values.setdefault("batch", [1])
    return list(itertools.product(values["prompt"], values["gen"], values["batch"]))


def random_prompts(model: ModelWeights, prompt_len: int, batch: int, seed: int) -> np.ndarray:
    high = min(BYTE_VOCAB, model.dims.vocab_size)
    return np.random.default_rng(seed).integers(0, high, size=(batch, prompt_len), dtype=np.int64)


def _time_mode(engine: CladaEngine, prompts: np.ndarray, gen_len: int, repeats: int) -> tuple[list[float], float, float]:
    engine.generate_batch(prompts, gen_len)  # warm-up
    walls, prefills, sparsities = [], [], []
    for _ in range(repeats):
        _, stats = engine.generate_batch(prompts, gen_len)
        walls.append(max(stats.wall_time_s, MIN_WALL_TIME_S))
        prefills.append(stats.prefill_time_s)
        sparsities.append(stats.mean_sparsity)
    return walls, float(np.median(prefills)), float(np.mean(sparsities))


def bench_latency(
    model: ModelWeights,
    policy: ThresholdPolicy,
    modes: Sequence[RuntimeMode | str],
    prompt_len: int,
    gen_len: int,
    batch: int = 1,
    repeats: int | None = None,
    seed: int | None = None,
) -> list[BenchResult]:
    """Median generation-loop latency of each mode against dense.

    Prefill is excluded from `wall_time_s` and reported as `prefill_time_s`. Dense is
    always timed as the denominator; it appears in the rows only when requested.

    Raises:
        ValueError: If repeats < 3.
        ContextLengthError: If prompt_len + gen_len - 1 exceeds max_ctx.
    """
    repeats = settings.BENCH_REPEATS if repeats is None else repeats
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    seed = settings.DEFAULT_SEED if seed is None else seed
    modes = [m if isinstance(m, RuntimeMode) else RuntimeMode.parse(m) for m in modes]
    prompts = random_prompts(model, prompt_len, batch, seed)

    timings: dict[str, tuple[list[float], float, float]] = {}
    dense = RuntimeMode.parse("dense")
    for mode in [dense, *[m for m in modes if m.label != dense.label]]:
        timings[mode.label] = _time_mode(CladaEngine(model, policy, mode), prompts, gen_len, repeats)
    dense_time = float(np.median(timings[dense.label][0]))

    rows = []
    for mode in modes:
        walls, prefill_time, sparsity = timings[mode.label]
        wall = float(np.median(walls))
        rows.append(
            BenchResult(
                mode=mode.label,
                prompt_len=prompt_len,
                gen_len=gen_len,
                batch_size=batch,
                wall_time_s=wall,
                speedup_vs_dense=dense_time / wall,
                mean_sparsity=sparsity,
                prefill_time_s=prefill_time,
                cv=float(np.std(walls) / np.mean(walls)),
                dims=model.dims,
            )
        )
        logger.info(
            f"prompt={prompt_len} gen={gen_len} batch={batch} {mode.label}: "
            f"{wall:.4f}s, speedup {rows[-1].speedup_vs_dense:.3f}, sparsity {sparsity:.3f}"
        )
    return rows


def bench_grid(
    model: ModelWeights,
    policy: ThresholdPolicy,
    modes: Sequence[RuntimeMode | str],
    grid: Sequence[tuple[int, int, int]],
    repeats: int | None = None,
    seed: int | None = None,
) -> list[BenchResult]:
    rows = []
    for prompt_len, gen_len, batch in grid:
        rows.extend(bench_latency(model, policy, modes, prompt_len, gen_len, batch, repeats, seed))
    return rows
