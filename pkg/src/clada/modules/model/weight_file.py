"""Binary weight file.

Layout (all integers little-endian):

    magic          4 bytes  b"CLDA"
    version        u32      1
    dims block     7 x u32  n_layers, d_model, d_h, n_heads, vocab_size, max_ctx, rng_seed
    activation_fn  u8       0 = silu, 1 = relu, 2 = gelu
    tensors        in ModelWeights.tensors() order, each:
                   u32 name length, name bytes (utf-8), f32 row-major payload

Tensor shapes are implied by the dims block, so a payload carries no shape header.
"""

import logging
import struct
from pathlib import Path

import numpy as np

from clada.core.constants import LAYER_TENSORS, WEIGHT_MAGIC, WEIGHT_VERSION
from clada.core.exceptions import DimensionError, WeightFormatError
from clada.modules.model.weights import ActivationFn, LayerWeights, ModelDims, ModelWeights, tensor_shapes

logger = logging.getLogger(__name__)

_ACTIVATION_CODES = {ActivationFn.SILU: 0, ActivationFn.RELU: 1, ActivationFn.GELU: 2}
_ACTIVATION_BY_CODE = {code: fn for fn, code in _ACTIVATION_CODES.items()}
_DIMS = struct.Struct("<7I")
_U32 = struct.Struct("<I")


def model_to_bytes(model: ModelWeights) -> bytes:
    d = model.dims
    parts = [
        WEIGHT_MAGIC,
        _U32.pack(WEIGHT_VERSION),
        _DIMS.pack(d.n_layers, d.d_model, d.d_h, d.n_heads, d.vocab_size, d.max_ctx, model.rng_seed),
        bytes([_ACTIVATION_CODES[model.activation_fn]]),
    ]
    for name, tensor in model.tensors():
        encoded = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, field: str) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise WeightFormatError(f"truncated at byte {len(self.data)}, needed {end}", field)
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk


def model_from_bytes(data: bytes) -> ModelWeights:
    """Parse a weight file image.

    Raises:
        WeightFormatError: On a bad magic, unknown version, truncation, unexpected
            tensor name or trailing bytes; the error names the offending field.
    """
    reader = _Reader(data)
    if reader.take(4, "magic") != WEIGHT_MAGIC:
        raise WeightFormatError(f"expected {WEIGHT_MAGIC!r}", "magic")
    (version,) = _U32.unpack(reader.take(4, "version"))
    if version != WEIGHT_VERSION:
        raise WeightFormatError(f"unsupported version {version}", "version")
    n_layers, d_model, d_h, n_heads, vocab_size, max_ctx, rng_seed = _DIMS.unpack(reader.take(_DIMS.size, "dims"))
    dims = ModelDims(
        n_layers=n_layers, d_model=d_model, d_h=d_h, n_heads=n_heads, vocab_size=vocab_size, max_ctx=max_ctx
    )
    try:
        dims.check()
    except DimensionError as e:
        raise WeightFormatError(str(e), "dims") from e
    code = reader.take(1, "activation_fn")[0]
    if code not in _ACTIVATION_BY_CODE:
        raise WeightFormatError(f"unknown activation code {code}", "activation_fn")

    shapes = tensor_shapes(dims)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        (name_len,) = _U32.unpack(reader.take(4, name))
        found = reader.take(name_len, name).decode("utf-8", errors="replace")
        if found != name:
            raise WeightFormatError(f"expected tensor {name!r}, found {found!r}", name)
        count = int(np.prod(shape))
        payload = reader.take(4 * count, name)
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    if reader.offset != len(data):
        raise WeightFormatError(f"{len(data) - reader.offset} trailing bytes", "eof")

    layers = tuple(
        LayerWeights(**{field: tensors[f"layers.{index}.{field}"] for field in LAYER_TENSORS})
        for index in range(dims.n_layers)
    )
    try:
        return ModelWeights(
            dims=dims,
            token_embedding=tensors["token_embedding"],
            layers=layers,
            final_norm=tensors["final_norm"],
            lm_head=tensors["lm_head"],
            activation_fn=_ACTIVATION_BY_CODE[code],
            rng_seed=rng_seed,
        )
    except DimensionError as e:
        raise WeightFormatError(str(e), "tensors") from e


def save_model(model: ModelWeights, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(model_to_bytes(model))
    logger.info(f"Saved model to {path}")
    return path


def load_model(path: str | Path) -> ModelWeights:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Weight file not found: {path}")
    return model_from_bytes(path.read_bytes())
