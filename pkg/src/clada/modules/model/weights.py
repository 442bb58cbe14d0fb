import logging
import math
from dataclasses import dataclass, replace
from enum import StrEnum
from functools import cached_property
from typing import Iterator

import numpy as np
from pydantic import BaseModel, ConfigDict

from clada.core.arithmetic import ceil_fraction
from clada.core.constants import LAYER_TENSORS
from clada.core.exceptions import DimensionError, LayerIndexError

logger = logging.getLogger(__name__)

U32_MAX = 2**32 - 1
# Upper bound on the total parameter count, keeps allocations sane.
MAX_PARAMETERS = 2**31


class ActivationFn(StrEnum):
    SILU = "silu"
    RELU = "relu"
    GELU = "gelu"


class ModelDims(BaseModel):
    """Shape of a toy decoder-only transformer.

    Construction never fails; `check()` enforces the invariants so callers can
    report a DimensionError with a useful message.
    """

    model_config = ConfigDict(frozen=True)

    n_layers: int
    d_model: int
    d_h: int
    n_heads: int
    vocab_size: int
    max_ctx: int

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def parameter_count(self) -> int:
        per_layer = 4 * self.d_model * self.d_model + 3 * self.d_h * self.d_model + 2 * self.d_model
        return 2 * self.vocab_size * self.d_model + self.n_layers * per_layer + self.d_model

    def check(self) -> "ModelDims":
        for name, value in self.model_dump().items():
            if value < 1:
                raise DimensionError(f"{name} must be >= 1, got {value}")
            if value > U32_MAX:
                raise DimensionError(f"{name} overflows u32: {value}")
        if self.vocab_size < 2:
            raise DimensionError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.d_model % self.n_heads != 0:
            raise DimensionError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.parameter_count() > MAX_PARAMETERS:
            raise DimensionError(f"parameter count {self.parameter_count()} exceeds {MAX_PARAMETERS}")
        return self


def tensor_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    """Expected shape of every tensor, keyed by name, in weight-file order."""
    shapes: dict[str, tuple[int, ...]] = {"token_embedding": (dims.vocab_size, dims.d_model)}
    for index in range(dims.n_layers):
        shapes[f"layers.{index}.attn_norm"] = (dims.d_model,)
        for proj in ("wq", "wk", "wv", "wo"):
            shapes[f"layers.{index}.{proj}"] = (dims.d_model, dims.d_model)
        shapes[f"layers.{index}.mlp_norm"] = (dims.d_model,)
        shapes[f"layers.{index}.w_in"] = (dims.d_h, dims.d_model)
        shapes[f"layers.{index}.v_in"] = (dims.d_h, dims.d_model)
        shapes[f"layers.{index}.w_out"] = (dims.d_model, dims.d_h)
    shapes["final_norm"] = (dims.d_model,)
    shapes["lm_head"] = (dims.vocab_size, dims.d_model)
    return shapes


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=np.float32)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class LayerWeights:
    """Parameters of one pre-norm block: attention projections and the gated MLP triplet.

    `w_in` and `v_in` are [d_h x d_model]; `w_out` is [d_model x d_h] so column j is
    the output direction of neuron j.
    """

    attn_norm: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    mlp_norm: np.ndarray
    w_in: np.ndarray
    v_in: np.ndarray
    w_out: np.ndarray

    def __post_init__(self) -> None:
        for name in LAYER_TENSORS:
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @cached_property
    def w_out_t(self) -> np.ndarray:
        """Row-major copy of W_out^T: row j is neuron j's output direction."""
        return _frozen(self.w_out.T)

    @cached_property
    def w_out_col_norms(self) -> np.ndarray:
        return _frozen(np.linalg.norm(self.w_out_t, axis=1))


@dataclass(frozen=True, eq=False)
class ModelWeights:
    dims: ModelDims
    token_embedding: np.ndarray
    layers: tuple[LayerWeights, ...]
    final_norm: np.ndarray
    lm_head: np.ndarray
    activation_fn: ActivationFn = ActivationFn.SILU
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "token_embedding", _frozen(self.token_embedding))
        object.__setattr__(self, "final_norm", _frozen(self.final_norm))
        object.__setattr__(self, "lm_head", _frozen(self.lm_head))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "activation_fn", ActivationFn(self.activation_fn))
        self.validate()

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield (name, tensor) pairs in weight-file order."""
        yield "token_embedding", self.token_embedding
        for index, layer in enumerate(self.layers):
            for name in LAYER_TENSORS:
                yield f"layers.{index}.{name}", getattr(layer, name)
        yield "final_norm", self.final_norm
        yield "lm_head", self.lm_head

    def validate(self) -> None:
        self.dims.check()
        if len(self.layers) != self.dims.n_layers:
            raise DimensionError(f"expected {self.dims.n_layers} layers, got {len(self.layers)}")
        expected = tensor_shapes(self.dims)
        for name, tensor in self.tensors():
            if tensor.shape != expected[name]:
                raise DimensionError(f"{name} has shape {tensor.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(tensor)):
                raise DimensionError(f"{name} contains NaN or Inf")

    def layer(self, index: int) -> LayerWeights:
        if not 0 <= index < self.dims.n_layers:
            raise LayerIndexError(f"layer {index} out of range for a {self.dims.n_layers}-layer model")
        return self.layers[index]

    def equals(self, other: "ModelWeights") -> bool:
        if self.dims != other.dims or self.activation_fn != other.activation_fn or self.rng_seed != other.rng_seed:
            return False
        return all(
            name_a == name_b and np.array_equal(a, b)
            for (name_a, a), (name_b, b) in zip(self.tensors(), other.tensors(), strict=True)
        )


def gen_random_model(seed: int, dims: ModelDims, activation_fn: ActivationFn | str = ActivationFn.SILU) -> ModelWeights:
    """Draw a model from a fixed distribution fully determined by `seed`.

    Every projection is uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)] drawn from a
    PCG64 generator in weight-file order; norm gains are ones. Same seed and dims
    give bit-identical weights.

    Raises:
        DimensionError: If `dims` violates its invariants or `seed` does not fit in u32.
    """
    dims.check()
    if not 0 <= seed <= U32_MAX:
        raise DimensionError(f"seed must fit in u32, got {seed}")

    rng = np.random.default_rng(seed)

    def uniform(rows: int, cols: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols)).astype(np.float32)

    token_embedding = rng.standard_normal((dims.vocab_size, dims.d_model)).astype(np.float32)
    layers = []
    for _ in range(dims.n_layers):
        layers.append(
            LayerWeights(
                attn_norm=np.ones(dims.d_model, dtype=np.float32),
                wq=uniform(dims.d_model, dims.d_model),
                wk=uniform(dims.d_model, dims.d_model),
                wv=uniform(dims.d_model, dims.d_model),
                wo=uniform(dims.d_model, dims.d_model),
                mlp_norm=np.ones(dims.d_model, dtype=np.float32),
                w_in=uniform(dims.d_h, dims.d_model),
                v_in=uniform(dims.d_h, dims.d_model),
                w_out=uniform(dims.d_model, dims.d_h),
            )
        )
    lm_head = uniform(dims.vocab_size, dims.d_model)
    logger.info(f"Generated random model seed={seed} dims={dims.model_dump()}")
    return ModelWeights(
        dims=dims,
        token_embedding=token_embedding,
        layers=tuple(layers),
        final_norm=np.ones(dims.d_model, dtype=np.float32),
        lm_head=lm_head,
        activation_fn=ActivationFn(activation_fn),
        rng_seed=seed,
    )


def plant_dead_neurons(
    model: ModelWeights, layer: int, fraction: float, seed: int
) -> tuple[ModelWeights, np.ndarray]:
    """Zero the W_out columns of ceil(fraction * d_h) seed-chosen neurons of one layer.

    Returns:
        The modified copy and the sorted planted index set.
    """
    target = model.layer(layer)
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")

    d_h = model.dims.d_h
    count = ceil_fraction(fraction, d_h)
    planted = np.sort(np.random.default_rng(seed).permutation(d_h)[:count])

    w_out = np.array(target.w_out, copy=True)
    w_out[:, planted] = 0.0
    layers = list(model.layers)
    layers[layer] = replace(target, w_out=w_out)
    logger.info(f"Planted {count} dead neurons in layer {layer}")
    return replace(model, layers=tuple(layers)), planted
