import re
from enum import StrEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from clada.core.arithmetic import ceil_fraction
from clada.modules.activation.meter import NeuronMagnitudes
from clada.modules.threshold.policy import ThresholdPolicy

# Mass fraction of the static Top-P baseline.
STATIC_TOP_P = 0.5


class ModeKind(StrEnum):
    DENSE = "dense"
    CLADA_FULL = "clada_full"
    CLADA_NO_SEMANTIC = "clada_no_semantic"
    CLADA_NO_STATISTICAL = "clada_no_statistical"
    TOP_P = "top_p"
    TOP_K = "top_k"


_PARAMETRIC = re.compile(r"^(top_p|top_k)[(:=]([0-9.eE+-]+)\)?$")


class RuntimeMode(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ModeKind
    p: float | None = None
    k_fraction: float | None = None

    @model_validator(mode="after")
    def _check_parameters(self) -> "RuntimeMode":
        if self.kind == ModeKind.TOP_P and not (self.p is not None and 0.0 < self.p <= 1.0):
            raise ValueError(f"top_p needs 0 < p <= 1, got {self.p}")
        if self.kind == ModeKind.TOP_K and not (self.k_fraction is not None and 0.0 < self.k_fraction <= 1.0):
            raise ValueError(f"top_k needs 0 < k_fraction <= 1, got {self.k_fraction}")
        return self

    @classmethod
    def parse(cls, text: str) -> "RuntimeMode":
        """Parse "dense", "clada_full", "top_p(0.5)", "top_k:0.25" and similar spellings."""
        text = text.strip().lower()
        match = _PARAMETRIC.match(text)
        if match:
            kind, value = match.group(1), float(match.group(2))
            return cls(kind=ModeKind.TOP_P, p=value) if kind == "top_p" else cls(kind=ModeKind.TOP_K, k_fraction=value)
        if text == "top_p":
            return cls(kind=ModeKind.TOP_P, p=STATIC_TOP_P)
        return cls(kind=ModeKind(text))

    @property
    def label(self) -> str:
        if self.kind == ModeKind.TOP_P:
            return f"top_p({self.p:g})"
        if self.kind == ModeKind.TOP_K:
            return f"top_k({self.k_fraction:g})"
        return self.kind.value

    @property
    def is_static(self) -> bool:
        return self.kind in (ModeKind.TOP_P, ModeKind.TOP_K)


def modulation(lam: float, gamma: float, fires_s: bool, fires_h: bool, sign: int = 1) -> float:
    """Threshold multiplier 1 + sign * (lam * I_s + gamma * I_H), floored at 0."""
    return max(0.0, 1.0 + sign * (lam * float(fires_s) + gamma * float(fires_h)))


def final_threshold(policy: ThresholdPolicy, layer: int, s: float, h: float) -> float:
    """tau_base scaled by the load multiplier; indicators use strict >."""
    entry = policy.layer(layer)
    fires_s, fires_h = s > policy.tau_s, h > policy.tau_h
    return entry.tau_base * modulation(entry.lambda_, entry.gamma, fires_s, fires_h, policy.modulation_sign)


def top_p_for_multiplier(multiplier: float) -> float:
    """Mass fraction of the no-statistical variant: the static Top-P base scaled by 1 / multiplier."""
    if multiplier <= 0.0:
        return 1.0
    return min(1.0, STATIC_TOP_P / multiplier)


def static_mask(mags: NeuronMagnitudes | np.ndarray, mode: RuntimeMode) -> np.ndarray:
    """Top-k or Top-P selection over magnitudes.

    top_k keeps the ceil(k_fraction * d_h) largest, ties going to the lower index.
    top_p keeps the shortest descending prefix whose mass reaches p * sum(A); with
    all-zero magnitudes it keeps nothing.
    """
    values = np.asarray(mags.values if isinstance(mags, NeuronMagnitudes) else mags, dtype=np.float64)
    if values.size == 0:
        raise ValueError("static_mask needs at least one magnitude")
    order = np.argsort(-values, kind="stable")
    mask = np.zeros(values.size, dtype=bool)

    if mode.kind == ModeKind.TOP_K:
        mask[order[: ceil_fraction(mode.k_fraction, values.size)]] = True
        return mask
    if mode.kind != ModeKind.TOP_P:
        raise ValueError(f"{mode.label} is not a static mask mode")

    total = values.sum()
    if total <= 0.0:
        return mask
    cumulative = np.cumsum(values[order])
    count = min(int(np.searchsorted(cumulative, mode.p * total, side="left")) + 1, values.size)
    mask[order[:count]] = True
    return mask
