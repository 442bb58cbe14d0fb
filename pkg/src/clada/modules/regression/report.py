import json
import logging
from pathlib import Path
from typing import Sequence

import pandas as pd

from clada.core.constants import STAR_LEVELS
from clada.core.exceptions import EmptyInputError
from clada.modules.regression.panel import FitResult

logger = logging.getLogger(__name__)

LEGEND = "t-statistics in parentheses; * p<0.1; ** p<0.05; *** p<0.01"


def stars(p_value: float) -> str:
    for level, mark in STAR_LEVELS:
        if p_value < level:
            return mark
    return ""


def table_frame(fits: Sequence[FitResult]) -> pd.DataFrame:
    """One column per fit: coefficient with stars over its t-statistic, then summary rows."""
    if not fits:
        raise EmptyInputError("report needs at least one fit")
    names: list[str] = []
    for fit in fits:
        names.extend(name for name in fit.names if name not in names)

    index: list[str] = []
    for name in names:
        index.extend([name, ""])
    index.extend(["Obs", "Adj R2", "Individual FE", "Dropped"])

    columns = {}
    for number, fit in enumerate(fits, start=1):
        cells: list[str] = []
        for name in names:
            if name in fit.names:
                estimate = fit.coefficient(name)
                cells.extend([f"{estimate.coef:.4f}{stars(estimate.p_value)}", f"({estimate.t_stat:.2f})"])
            else:
                cells.extend(["", ""])
        cells.extend([str(fit.n_obs), f"{fit.adj_r2:.3f}", "YES", ", ".join(sorted(fit.dropped)) or "-"])
        header = f"({number}) {fit.label}".strip()
        columns[header] = cells
    return pd.DataFrame(columns, index=index)


def report_table(fits: Sequence[FitResult], path: str | Path | None = None) -> str:
    """Render fits side by side, aligned by covariate name.

    With a path, writes the text table (or CSV for a .csv suffix) and the fits as
    JSON next to it.
    """
    frame = table_frame(fits)
    text = f"Dependent variable: {fits[0].response}\n{frame.to_string()}\n{LEGEND}\n"
    if path is not None:
        path = Path(path)
        if path.suffix == ".csv":
            frame.to_csv(path, index_label="")
        else:
            path.write_text(text, encoding="utf-8")
        json_path = path.with_suffix(".json")
        json_path.write_text(json.dumps([fit.model_dump() for fit in fits], indent=2) + "\n", encoding="utf-8")
        logger.info(f"Wrote regression table to {path} and {json_path}")
    return text
