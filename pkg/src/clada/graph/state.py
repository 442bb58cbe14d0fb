from typing import Any, TypedDict

import pandas as pd

from clada.modules.corpus.records import CorpusRecord
from clada.modules.model.weights import ModelWeights
from clada.modules.regression.panel import FitResult


class ValidationState(TypedDict, total=False):
    """State of the prefix-similarity validation workflow.

    Attributes:
        model_path (str): Weight file to probe; a seeded random model is generated when empty.
        corpus_path (str): JSON-lines corpus; a synthetic corpus is generated when empty.
        output_dir (str): Directory receiving the panel, regression table and summary.
        seed (int): Seed for generated inputs, pair order and random-token sequences.
        options (dict): Experiment overrides: alphas, n_pairs, seq_len, layer, cluster.
        regress (bool): Whether the fixed-effects grid is fitted after the experiment.
        model (ModelWeights): The loaded or generated model.
        corpus (list[CorpusRecord]): The loaded or generated corpus.
        panel (pd.DataFrame): One row per pair, group, alpha and metric.
        fits (list[FitResult]): Fitted specifications, empty when regression is skipped.
        artifacts (dict[str, str]): Written files by kind.
    """

    model_path: str
    corpus_path: str
    output_dir: str
    seed: int
    options: dict[str, Any]
    regress: bool
    model: ModelWeights
    corpus: list[CorpusRecord]
    panel: pd.DataFrame
    fits: list[FitResult]
    artifacts: dict[str, str]
