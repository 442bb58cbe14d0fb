import json

import numpy as np
import pandas as pd
import pytest

from clada.core.exceptions import CollinearityError, EmptyInputError, InsufficientDataError
from clada.modules.regression.panel import ZERO_VARIANCE, fit_fe, fit_panel_grid, within_transform
from clada.modules.regression.report import report_table, stars, table_frame

BETA, GAMMA_S, GAMMA_H = 4.12, -0.80, -0.12
PREFIX_LENGTHS = np.array([64, 77, 90, 103, 116, 128])


def planted_panel(rng: np.random.Generator, individuals: int, per: int, noise: float | None, r2: float = 0.17):
    """Panel with known slopes; `noise=None` tunes the noise to the requested within R^2."""
    pair_id = np.repeat(np.arange(individuals), per)
    n = pair_id.size
    frame = pd.DataFrame(
        {
            "pair_id": pair_id,
            "prefix_len": rng.choice(PREFIX_LENGTHS, size=n).astype(float),
            "surprisal_mean_norm": rng.uniform(size=n),
            "entropy_mean_norm": rng.uniform(size=n),
            "token_len": 256,
        }
    )
    signal = (
        BETA * frame["prefix_len"] + GAMMA_S * frame["surprisal_mean_norm"] + GAMMA_H * frame["entropy_mean_norm"]
    )
    if noise is None:
        within = signal - signal.groupby(pair_id).transform("mean")
        noise = float(np.sqrt(within.var() * (1.0 - r2) / r2))
    effects = rng.normal(scale=50.0, size=individuals)[pair_id]
    frame["delta_sim"] = signal + effects + rng.normal(scale=noise, size=n)
    return frame


def dummy_ols(frame: pd.DataFrame, response: str, covariates: list[str]):
    dummies = pd.get_dummies(frame["pair_id"], dtype=float).to_numpy()
    x = np.hstack([frame[covariates].to_numpy(dtype=float), dummies])
    y = frame[response].to_numpy(dtype=float)
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    residuals = y - x @ beta
    dof = x.shape[0] - x.shape[1]
    covariance = (residuals @ residuals) / dof * np.linalg.inv(x.T @ x)
    k = len(covariates)
    return beta[:k], np.sqrt(np.diag(covariance)[:k])


def test_within_estimator_equals_dummy_ols(rng):
    frame = planted_panel(rng, individuals=30, per=5, noise=1.0)
    covariates = ["prefix_len", "surprisal_mean_norm", "entropy_mean_norm"]
    fit = fit_fe(frame, "delta_sim", covariates)
    beta, std_err = dummy_ols(frame, "delta_sim", covariates)
    np.testing.assert_allclose([c.coef for c in fit.coefficients], beta, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose([c.std_err for c in fit.coefficients], std_err, rtol=1e-8, atol=1e-10)
    assert fit.df_resid == 150 - 30 - 3
    assert fit.n_individuals == 30 and fit.n_obs == 150


def test_planted_coefficients_at_low_fit(rng):
    frame = planted_panel(rng, individuals=1000, per=12, noise=None)
    fit = fit_fe(frame, "delta_sim", ["prefix_len", "surprisal_mean_norm", "entropy_mean_norm"])
    prefix = fit.coefficient("prefix_len")
    assert abs(prefix.t_stat) > 5
    assert abs(prefix.coef - BETA) < 4 * prefix.std_err
    assert 0.12 < fit.adj_r2 < 0.22
    assert fit.n_obs == 12000


def test_planted_coefficients_recovered(rng):
    frame = planted_panel(rng, individuals=1000, per=12, noise=0.05)
    fit = fit_fe(frame, "delta_sim", ["prefix_len", "surprisal_mean_norm", "entropy_mean_norm", "token_len"])
    for name, expected in (("prefix_len", BETA), ("surprisal_mean_norm", GAMMA_S), ("entropy_mean_norm", GAMMA_H)):
        estimate = fit.coefficient(name)
        assert estimate.coef == pytest.approx(expected, rel=0.05)
        assert abs(estimate.t_stat) > 5
    assert fit.dropped == {"token_len": ZERO_VARIANCE}
    assert "token_len" not in fit.names


def test_t_stats_are_scale_invariant(rng):
    frame = planted_panel(rng, individuals=40, per=4, noise=2.0)
    rescaled = frame.assign(prefix_len=frame["prefix_len"] * 1000.0)
    base = fit_fe(frame, "delta_sim", ["prefix_len", "surprisal_mean_norm"])
    scaled = fit_fe(rescaled, "delta_sim", ["prefix_len", "surprisal_mean_norm"])
    assert scaled.coefficient("prefix_len").t_stat == pytest.approx(base.coefficient("prefix_len").t_stat, rel=1e-8)
    assert scaled.coefficient("prefix_len").coef == pytest.approx(base.coefficient("prefix_len").coef / 1000.0)


def test_singletons_are_dropped(rng):
    frame = planted_panel(rng, individuals=20, per=3, noise=1.0)
    extra = frame.iloc[[0]].assign(pair_id=999)
    fit = fit_fe(pd.concat([frame, extra], ignore_index=True), "delta_sim", ["prefix_len"])
    assert fit.n_singletons_dropped == 1
    assert fit.n_obs == 60


def test_within_transform_demeans(rng):
    frame = planted_panel(rng, individuals=5, per=4, noise=1.0)
    within = within_transform(frame, ["prefix_len"])
    assert within.data.groupby(within.entity)["prefix_len"].mean().abs().max() < 1e-9
    with pytest.raises(InsufficientDataError):
        within_transform(frame.drop_duplicates("pair_id"), ["prefix_len"])


def test_collinear_covariates_are_named(rng):
    frame = planted_panel(rng, individuals=10, per=4, noise=1.0)
    frame["twice"] = 2.0 * frame["prefix_len"]
    with pytest.raises(CollinearityError) as info:
        fit_fe(frame, "delta_sim", ["prefix_len", "twice"])
    assert info.value.columns


def test_only_constant_covariates(rng):
    frame = planted_panel(rng, individuals=10, per=4, noise=1.0)
    with pytest.raises(InsufficientDataError):
        fit_fe(frame, "delta_sim", ["token_len"])


def test_cluster_standard_errors(rng):
    frame = planted_panel(rng, individuals=50, per=6, noise=3.0)
    classical = fit_fe(frame, "delta_sim", ["prefix_len", "surprisal_mean_norm"])
    clustered = fit_fe(frame, "delta_sim", ["prefix_len", "surprisal_mean_norm"], cluster=True)
    assert clustered.cov_type == "cluster"
    assert clustered.coefficient("prefix_len").coef == pytest.approx(classical.coefficient("prefix_len").coef)
    assert clustered.coefficient("prefix_len").std_err != classical.coefficient("prefix_len").std_err


def grid_panel(rng) -> pd.DataFrame:
    parts = []
    for group in ("NLS", "RTS"):
        for metric in ("cka", "cos"):
            part = planted_panel(rng, individuals=15, per=6, noise=5.0)
            parts.append(part.assign(group=group, metric=metric))
    return pd.concat(parts, ignore_index=True)


def test_fit_panel_grid(rng):
    fits = fit_panel_grid(grid_panel(rng))
    assert len(fits) == 12
    assert [f.label for f in fits[:3]] == ["NLS/cka"] * 3
    assert [len(f.names) for f in fits[:3]] == [1, 2, 3]
    assert all(f.dropped == {"token_len": ZERO_VARIANCE} for f in fits)
    with pytest.raises(InsufficientDataError):
        fit_panel_grid(grid_panel(rng).assign(metric="euclid"))


@pytest.mark.parametrize("p, mark", [(0.001, "***"), (0.01, "**"), (0.049, "**"), (0.05, "*"), (0.099, "*"), (0.1, "")])
def test_stars(p, mark):
    assert stars(p) == mark


def test_report_table(rng, tmp_path):
    fits = fit_panel_grid(grid_panel(rng))[:3]
    text = report_table(fits, tmp_path / "table.txt")
    assert text.startswith("Dependent variable: delta_sim")
    assert "***" in text and "Individual FE" in text and "YES" in text
    assert text.rstrip().endswith("*** p<0.01")
    frame = table_frame(fits)
    assert frame.loc["Obs"].tolist() == ["90"] * 3
    assert frame.iloc[2, 0] == ""
    dumped = json.loads((tmp_path / "table.json").read_text(encoding="utf-8"))
    assert [d["label"] for d in dumped] == ["NLS/cka"] * 3
    report_table(fits, tmp_path / "table.csv")
    assert pd.read_csv(tmp_path / "table.csv").shape[1] == 4
    with pytest.raises(EmptyInputError):
        report_table([])


def test_individual_level_shift_is_absorbed(rng):
    frame = planted_panel(rng, individuals=25, per=5, noise=1.0)
    covariates = ["prefix_len", "surprisal_mean_norm", "entropy_mean_norm"]
    shifted = frame.copy()
    shifted.loc[shifted["pair_id"] == 7, "delta_sim"] += 1234.5
    base = fit_fe(frame, "delta_sim", covariates)
    moved = fit_fe(shifted, "delta_sim", covariates)
    np.testing.assert_allclose(
        [c.coef for c in moved.coefficients], [c.coef for c in base.coefficients], rtol=1e-7, atol=1e-9
    )
    np.testing.assert_allclose(
        [c.std_err for c in moved.coefficients], [c.std_err for c in base.coefficients], rtol=1e-7
    )


def test_fit_ignores_a_duplicated_frame_index(rng):
    frame = planted_panel(rng, individuals=10, per=4, noise=1.0)
    base = fit_fe(frame, "delta_sim", ["prefix_len"])
    relabelled = fit_fe(frame.set_index(np.zeros(len(frame), dtype=int)), "delta_sim", ["prefix_len"])
    assert relabelled.coefficient("prefix_len").coef == pytest.approx(base.coefficient("prefix_len").coef)
    assert relabelled.n_obs == 40


def test_noiseless_panel_is_fitted_exactly(rng):
    frame = planted_panel(rng, individuals=20, per=6, noise=0.0)
    fit = fit_fe(frame, "delta_sim", ["prefix_len", "surprisal_mean_norm", "entropy_mean_norm"])
    for name, expected in (("prefix_len", BETA), ("surprisal_mean_norm", GAMMA_S), ("entropy_mean_norm", GAMMA_H)):
        assert fit.coefficient(name).coef == pytest.approx(expected, rel=1e-8)
    assert fit.adj_r2 == pytest.approx(1.0, abs=1e-9)
