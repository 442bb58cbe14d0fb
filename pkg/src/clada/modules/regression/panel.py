import logging
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from linearmodels.panel import PanelOLS
from pydantic import BaseModel
from scipy import linalg

from clada.core.constants import GROUPS, METRICS
from clada.core.exceptions import CollinearityError, InsufficientDataError

logger = logging.getLogger(__name__)

ZERO_VARIANCE = "zero within-variance"


class CoefficientEstimate(BaseModel):
    name: str
    coef: float
    std_err: float
    t_stat: float
    p_value: float


class FitResult(BaseModel):
    """Within-estimator fit. No intercept: it is absorbed by the individual effects."""

    label: str = ""
    response: str
    coefficients: list[CoefficientEstimate]
    r2_within: float
    adj_r2: float
    n_obs: int
    n_individuals: int
    df_resid: int
    cov_type: Literal["classical", "cluster"] = "classical"
    dropped: dict[str, str] = {}
    n_singletons_dropped: int = 0

    def coefficient(self, name: str) -> CoefficientEstimate:
        for estimate in self.coefficients:
            if estimate.name == name:
                return estimate
        raise KeyError(f"{name} is not among the fitted covariates")

    @property
    def names(self) -> list[str]:
        return [estimate.name for estimate in self.coefficients]


@dataclass
class WithinPanel:
    """Panel demeaned within individuals; `means` holds the individual means per row."""

    data: pd.DataFrame
    means: pd.DataFrame
    entity: pd.Series
    n_singletons: int

    @property
    def n_individuals(self) -> int:
        return int(self.entity.nunique())


def within_transform(panel: pd.DataFrame, columns: Sequence[str], entity: str = "pair_id") -> WithinPanel:
    """Subtract each individual's mean from `columns`; individuals seen once are dropped.

    Raises:
        InsufficientDataError: If no individual has two or more observations.
    """
    columns = list(columns)
    sizes = panel.groupby(entity)[entity].transform("size")
    kept = panel[sizes >= 2]
    n_singletons = int(panel.loc[sizes < 2, entity].nunique())
    if n_singletons:
        logger.warning(f"Dropped {n_singletons} individuals with a single observation")
    if kept.empty:
        raise InsufficientDataError("no individual has two or more observations")

    values = kept[columns].astype(np.float64)
    means = values.groupby(kept[entity]).transform("mean")
    return WithinPanel(data=values - means, means=means, entity=kept[entity], n_singletons=n_singletons)


def _check_rank(design: np.ndarray, names: list[str]) -> None:
    _, r, pivots = linalg.qr(design, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(r))
    tolerance = max(design.shape) * np.finfo(np.float64).eps * (diagonal[0] if diagonal.size else 0.0)
    rank = int((diagonal > tolerance).sum())
    if rank < len(names):
        raise CollinearityError([names[p] for p in pivots[rank:]])


def fit_fe(
    panel: pd.DataFrame,
    response: str,
    covariates: Sequence[str],
    entity: str = "pair_id",
    cluster: bool = False,
    label: str = "",
) -> FitResult:
    """Entity fixed-effects regression through `linearmodels.PanelOLS`.

    Covariates with no variation inside any individual are dropped with reason
    "zero within-variance" before the fit. Standard errors are classical with
    n - n_individuals - k residual degrees of freedom, or clustered by individual
    with `cluster`.

    Raises:
        CollinearityError: If the remaining design is rank deficient.
        InsufficientDataError: If the fit is not identified.
    """
    covariates = list(covariates)
    panel = panel.reset_index(drop=True)
    within = within_transform(panel, [response, *covariates], entity)

    dropped: dict[str, str] = {}
    kept: list[str] = []
    for name in covariates:
        column = within.data[name].to_numpy()
        scale = max(1.0, float(np.abs(within.means[name]).max()))
        if np.all(np.abs(column) <= 1e-12 * scale):
            dropped[name] = ZERO_VARIANCE
            logger.warning(f"Dropping {name}: {ZERO_VARIANCE}")
        else:
            kept.append(name)
    if not kept:
        raise InsufficientDataError("no covariate varies within individuals")

    _check_rank(within.data[kept].to_numpy(), kept)
    n_obs, k = len(within.data), len(kept)
    n_individuals = within.n_individuals
    if n_obs - n_individuals - k <= 0:
        raise InsufficientDataError(
            f"{n_obs} observations cannot identify {n_individuals} effects and {k} covariates"
        )

    frame = panel.loc[within.data.index, [entity, response, *kept]]
    frame = frame.assign(occasion=frame.groupby(entity).cumcount()).set_index([entity, "occasion"])
    model = PanelOLS(
        frame[response].astype(np.float64),
        frame[kept].astype(np.float64),
        entity_effects=True,
        drop_absorbed=True,
    )
    if cluster:
        results = model.fit(cov_type="clustered", cluster_entity=True, debiased=True)
    else:
        results = model.fit(cov_type="unadjusted", debiased=True)

    for name in kept:
        if name not in results.params.index:
            dropped[name] = "absorbed by individual effects"
    fitted = [name for name in kept if name in results.params.index]

    df_resid = int(results.df_resid)
    r2 = float(results.rsquared_within)
    adj_r2 = 1.0 - (1.0 - r2) * (n_obs - n_individuals) / df_resid

    result = FitResult(
        label=label,
        response=response,
        coefficients=[
            CoefficientEstimate(
                name=name,
                coef=float(results.params[name]),
                std_err=float(results.std_errors[name]),
                t_stat=float(results.tstats[name]),
                p_value=float(results.pvalues[name]),
            )
            for name in fitted
        ],
        r2_within=r2,
        adj_r2=adj_r2,
        n_obs=int(results.nobs),
        n_individuals=n_individuals,
        df_resid=df_resid,
        cov_type="cluster" if cluster else "classical",
        dropped=dropped,
        n_singletons_dropped=within.n_singletons,
    )
    logger.info(f"Fitted {response} ~ {' + '.join(fitted)}: n={n_obs}, adj R2={adj_r2:.3f}")
    return result


# Nested specifications of the prefix-length study; token_len is always offered.
SPECIFICATIONS = (
    ("prefix_len", "token_len"),
    ("prefix_len", "surprisal_mean_norm", "token_len"),
    ("prefix_len", "surprisal_mean_norm", "entropy_mean_norm", "token_len"),
)


def fit_panel_grid(panel: pd.DataFrame, cluster: bool = False) -> list[FitResult]:
    """Fit every nested specification for each metric and group present in the panel."""
    fits = []
    for metric in METRICS:
        for group in GROUPS:
            subset = panel[(panel["metric"] == metric) & (panel["group"] == group)]
            if subset.empty:
                continue
            for spec in SPECIFICATIONS:
                fits.append(
                    fit_fe(subset, "delta_sim", spec, entity="pair_id", cluster=cluster, label=f"{group}/{metric}")
                )
    if not fits:
        raise InsufficientDataError("panel holds no rows for any metric and group")
    return fits
