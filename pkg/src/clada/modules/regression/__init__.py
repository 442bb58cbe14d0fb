from .panel import (
    SPECIFICATIONS,
    ZERO_VARIANCE,
    CoefficientEstimate,
    FitResult,
    WithinPanel,
    fit_fe,
    fit_panel_grid,
    within_transform,
)
from .report import report_table, stars, table_frame

__all__ = [
    "SPECIFICATIONS",
    "ZERO_VARIANCE",
    "CoefficientEstimate",
    "FitResult",
    "WithinPanel",
    "fit_fe",
    "fit_panel_grid",
    "report_table",
    "stars",
    "table_frame",
    "within_transform",
]
