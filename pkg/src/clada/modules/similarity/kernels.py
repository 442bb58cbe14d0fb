"""Similarity of activation matrices: linear alignment as printed (no centering) and flattened cosine."""

from typing import Callable, Literal

import numpy as np

from clada.core.exceptions import DegenerateInputError, DimensionError
from clada.settings import settings

Metric = Literal["cka", "cos"]


def _pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    if not np.any(x) or not np.any(y):
        raise DegenerateInputError("similarity of an all-zero matrix is undefined")
    return x, y


def cka(x: np.ndarray, y: np.ndarray) -> float:
    """||X^T Y||_F^2 / (||X^T X||_F * ||Y^T Y||_F), clipped to [0, 1].

    Uses whichever Gram side is smaller; <X X^T, Y Y^T>_F equals ||X^T Y||_F^2.
    """
    x, y = _pair(np.atleast_2d(x), np.atleast_2d(y))
    if x.shape[0] >= x.shape[1]:
        cross = np.sum((x.T @ y) ** 2)
        gram_x, gram_y = x.T @ x, y.T @ y
    else:
        gram_x, gram_y = x @ x.T, y @ y.T
        cross = np.sum(gram_x * gram_y)
    value = cross / (np.linalg.norm(gram_x) * np.linalg.norm(gram_y))
    return float(np.clip(value, 0.0, 1.0))


def cosine(x: np.ndarray, y: np.ndarray) -> float:
    x, y = _pair(x, y)
    x, y = x.ravel(), y.ravel()
    value = (x @ y) / (np.linalg.norm(x) * np.linalg.norm(y))
    return float(np.clip(value, -1.0, 1.0))


METRICS: dict[str, Callable[[np.ndarray, np.ndarray], float]] = {"cka": cka, "cos": cosine}


def similarity(x: np.ndarray, y: np.ndarray, metric: Metric = "cka") -> float:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}, expected one of {sorted(METRICS)}")
    return METRICS[metric](x, y)


def delta_sim(ma: np.ndarray, mb: np.ndarray, ma_prime: np.ndarray, metric: Metric = "cka") -> float:
    """Relative similarity shift sim(A', B) / sim(A, B) - 1.

    Raises:
        DegenerateInputError: If |sim(A, B)| is below DEGENERATE_NORM or an input matrix is all zeros.
    """
    base = similarity(ma, mb, metric)
    if abs(base) < settings.DEGENERATE_NORM:
        raise DegenerateInputError(f"{metric} similarity of the reference pair is {base:.3g}, too close to zero")
    return similarity(ma_prime, mb, metric) / base - 1.0
