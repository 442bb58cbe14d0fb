import logging
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image

from clada.core.exceptions import EmptyInputError
from clada.modules.model.transformer import LayerTrace
from clada.modules.similarity.extraction import ActivationMatrix

logger = logging.getLogger(__name__)


def to_grey(values: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255 (rounded); a constant matrix maps to zeros."""
    values = np.asarray(values, dtype=np.float64)
    low, high = values.min(), values.max()
    if high == low:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.rint((values - low) / (high - low) * 255.0).astype(np.uint8)


def export_heatmap(
    data: np.ndarray | LayerTrace | ActivationMatrix, path: str | Path, pgm: bool = True
) -> list[Path]:
    """Write a heat map as CSV (columns neuron_0..) and optionally a greyscale PGM next to it.

    A LayerTrace is written as its per-token magnitudes, rows being positions.
    """
    if isinstance(data, LayerTrace):
        values = data.magnitudes
    elif isinstance(data, ActivationMatrix):
        values = data.matrix
    else:
        values = data
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.size == 0:
        raise EmptyInputError("heat map data is empty")

    path = Path(path)
    frame = pd.DataFrame(values, columns=[f"neuron_{j}" for j in range(values.shape[1])])
    frame.to_csv(path, index=False)
    written = [path]
    if pgm:
        image_path = path.with_suffix(".pgm")
        Image.fromarray(to_grey(values)).save(image_path, format="PPM")
        written.append(image_path)
    logger.info(f"Wrote heat map {values.shape[0]}x{values.shape[1]} to {path}")
    return written
