import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from clada.core.exceptions import LayerIndexError, PolicyFormatError
from clada.modules.activation.meter import Aggregation
from clada.settings import settings

logger = logging.getLogger(__name__)

# Slack allowed between the searched budget and the recorded achieved CETT.
FEASIBILITY_SLACK = 1e-3


class SearchConfig(BaseModel):
    """Offline search parameters; hashed into the policy metadata."""

    model_config = ConfigDict(frozen=True)

    cett_budget: float = Field(default_factory=lambda: settings.CETT_BUDGET, ge=0.0, le=1.0)
    method: Literal["bisection", "grid"] = Field(default_factory=lambda: settings.SEARCH_METHOD)
    bisection_iters: int = Field(default_factory=lambda: settings.BISECTION_ITERS, ge=1)
    grid: int = Field(default_factory=lambda: settings.GRID_QUANTILES, ge=1)
    corpus_id: str = "unspecified"
    token_cap: int = Field(default_factory=lambda: settings.VALIDATION_TOKEN_CAP, ge=1)

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


class LayerPolicy(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    tau_base: float = Field(ge=0.0)
    lambda_: float = Field(default_factory=lambda: settings.DEFAULT_LAMBDA, alias="lambda")
    gamma: float = Field(default_factory=lambda: settings.DEFAULT_GAMMA)
    achieved_cett: float | None = None
    achieved_sparsity: float | None = Field(default=None, ge=0.0, le=1.0)

    @field_validator("tau_base", "lambda_", "gamma")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value


class ThresholdPolicy(BaseModel):
    """Per-layer base thresholds and modulation weights plus the global cognitive thresholds.

    Attributes:
        signal_scale: Whether tau_s/tau_H compare against normalized signals or raw nats.
        modulation_sign: +1 raises thresholds under load, -1 lowers them.
        aggregation: How prefill magnitudes combine over prompt positions.
    """

    model_config = ConfigDict(populate_by_name=True)

    cett_budget: float = Field(default_factory=lambda: settings.CETT_BUDGET, ge=0.0, le=1.0)
    tau_s: float = Field(default_factory=lambda: settings.SURPRISAL_QUANTILE)
    tau_h: float = Field(default_factory=lambda: settings.ENTROPY_QUANTILE, alias="tau_H")
    signal_scale: Literal["normalized", "raw"] = "normalized"
    modulation_sign: Literal[1, -1] = 1
    aggregation: Aggregation = Aggregation.MEAN
    layers: list[LayerPolicy] = Field(min_length=1)
    meta: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _feasible(self) -> "ThresholdPolicy":
        for index, layer in enumerate(self.layers):
            if layer.achieved_cett is not None and layer.achieved_cett > self.cett_budget + FEASIBILITY_SLACK:
                raise ValueError(
                    f"layer {index}: achieved_cett {layer.achieved_cett} exceeds budget {self.cett_budget}"
                )
        return self

    @classmethod
    def uniform(cls, n_layers: int, tau_base: float, **overrides: Any) -> "ThresholdPolicy":
        """Same tau_base on every layer with default lambda and gamma."""
        layer_fields = {key: overrides.pop(key) for key in ("lambda_", "gamma") if key in overrides}
        return cls(layers=[LayerPolicy(tau_base=tau_base, **layer_fields) for _ in range(n_layers)], **overrides)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer(self, index: int) -> LayerPolicy:
        if not 0 <= index < len(self.layers):
            raise LayerIndexError(f"layer {index} out of range for a {len(self.layers)}-layer policy")
        return self.layers[index]

    def tau_bases(self) -> list[float]:
        return [layer.tau_base for layer in self.layers]


def policy_to_json(policy: ThresholdPolicy) -> str:
    return json.dumps(policy.model_dump(mode="json", by_alias=True), indent=2, sort_keys=True)


def policy_from_json(text: str) -> ThresholdPolicy:
    try:
        return ThresholdPolicy.model_validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "policy"
        raise PolicyFormatError(f"{location}: {first['msg']}") from e


def save_policy(policy: ThresholdPolicy, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(policy_to_json(policy) + "\n", encoding="utf-8")
    logger.info(f"Saved policy for {policy.n_layers} layers to {path}")
    return path


def load_policy(path: str | Path) -> ThresholdPolicy:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Policy file not found: {path}")
    return policy_from_json(path.read_text(encoding="utf-8"))
