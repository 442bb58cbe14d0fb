import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from clada.core.constants import ABLATION_COLUMNS
from clada.core.exceptions import EmptyInputError
from clada.modules.model.weights import ModelWeights
from clada.modules.runtime.engine import CladaEngine
from clada.modules.runtime.modes import RuntimeMode
from clada.modules.threshold.policy import ThresholdPolicy

logger = logging.getLogger(__name__)


class AblationRow(BaseModel):
    mode: str
    agreement_rate: float
    mean_sparsity: float
    wall_time_s: float
    indicator_fire_rate_s: float
    indicator_fire_rate_H: float


def ablation_run(
    model: ModelWeights,
    prompts: Sequence[Sequence[int] | np.ndarray],
    policy: ThresholdPolicy,
    modes: Sequence[RuntimeMode | str],
    max_new: int = 32,
    teacher_forced: bool = True,
) -> list[AblationRow]:
    """Compare runtime modes against dense greedy decoding on the same prompts.

    With `teacher_forced` every mode is fed the dense trajectory and agreement is the
    fraction of steps whose argmax matches the dense token; otherwise each mode runs
    free and agreement is position-wise token identity. The first token comes from the
    dense prefill in every mode, so agreement is taken over tokens 1..max_new-1.

    Raises:
        ValueError: If max_new < 2.
    """
    if max_new < 2:
        raise ValueError(f"agreement needs max_new >= 2, got {max_new}")
    if not modes:
        raise EmptyInputError("ablation needs at least one mode")
    if not prompts:
        raise EmptyInputError("ablation needs at least one prompt")
    modes = [m if isinstance(m, RuntimeMode) else RuntimeMode.parse(m) for m in modes]

    dense_engine = CladaEngine(model, policy, "dense")
    references = []
    for prompt in prompts:
        tokens, _ = dense_engine.generate(prompt, max_new)
        references.append(np.asarray(tokens, dtype=np.int64))

    rows = []
    for mode in modes:
        engine = CladaEngine(model, policy, mode)
        agreements, sparsities = [], []
        wall_time = 0.0
        fires_s = fires_h = steps = 0
        for prompt, reference in zip(prompts, references):
            prompt = np.asarray(prompt, dtype=np.int64)
            state = engine.prefill(prompt[None, :], capacity=prompt.size + max_new)
            forced = reference[None, :] if teacher_forced else None
            fed, predicted, stats = engine.decode(state, max_new, forced=forced)
            produced = predicted[0] if teacher_forced else fed[0]
            agreements.append(float(np.mean(produced[1:] == reference[1:])))
            sparsities.append(stats.mean_sparsity)
            wall_time += stats.wall_time_s
            fires_s += stats.fires_s
            fires_h += stats.fires_h
            steps += stats.decode_steps
        rows.append(
            AblationRow(
                mode=mode.label,
                agreement_rate=float(np.mean(agreements)),
                mean_sparsity=float(np.mean(sparsities)),
                wall_time_s=wall_time,
                indicator_fire_rate_s=fires_s / max(steps, 1),
                indicator_fire_rate_H=fires_h / max(steps, 1),
            )
        )
        logger.info(f"Ablation {mode.label}: agreement={rows[-1].agreement_rate:.3f} sparsity={rows[-1].mean_sparsity:.3f}")
    return rows


def write_ablation_report(rows: Sequence[AblationRow], path: str | Path) -> Path:
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=list(ABLATION_COLUMNS))
    path = Path(path)
    frame.to_csv(path, index=False)
    return path
