from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fe_frame, synthetic_panel
from oracles import hc1, sandwich
from rlindex.econ import (
    CollinearityError,
    RegressionSpec,
    cluster_se,
    cluster_vcov,
    demean,
    did,
    event_study,
    fe_dof,
    implied_peak,
    occupation_frame,
    ols,
    prepare_panel,
    stars,
    wage_seniority_models,
)
from rlindex.index import OccupationScore
from rlindex.ingest import OccupationProfile, month_range


def test_exact_line():
    df = pd.DataFrame({"x": [0.0, 1, 2, 3, 4]})
    df["y"] = 2 * df["x"] + 1
    res = ols(RegressionSpec("y", ["x"]), df)
    assert res["x"] == pytest.approx(2.0, abs=1e-10)
    assert res["const"] == pytest.approx(1.0, abs=1e-10)
    assert res.r2 == pytest.approx(1.0, abs=1e-12)


def test_exact_fit_with_two_way_effects():
    df = fe_frame(np.random.default_rng(0))
    for method in ("demean", "dummies"):
        res = ols(RegressionSpec("y", ["x1", "x2"], fixed_effects=["g", "h"]), df, fe_method=method)
        assert res["x1"] == pytest.approx(1.5, abs=1e-10)
        assert res["x2"] == pytest.approx(-0.7, abs=1e-10)
        assert "const" not in res.names


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40), st.integers(2, 10))
def test_demean_matches_dummies(seed, g, h):
    df = fe_frame(np.random.default_rng(seed), n=250, g=g, h=h, noise=1.0)
    spec = RegressionSpec("y", ["x1", "x2"], fixed_effects=["g", ("h", "cl")], cluster="cl")
    if df["cl"].nunique() < 2:
        spec.cluster = None
    a = ols(spec, df, fe_method="demean")
    b = ols(spec, df, fe_method="dummies")
    assert np.allclose(a.coef, b.coef, atol=1e-8, rtol=0)
    assert np.allclose(a.se, b.se, atol=1e-8, rtol=0)
    assert a.fe_dof == b.fe_dof
    assert a.r2 == pytest.approx(b.r2, abs=1e-8)


def test_residuals_orthogonal_to_regressors_and_dummies():
    df = fe_frame(np.random.default_rng(5), noise=1.0)
    res = ols(RegressionSpec("y", ["x1", "x2"], fixed_effects=["g", "h"]), df)
    x = df[["x1", "x2"]].to_numpy()
    assert np.abs(x.T @ res.residuals).max() < 1e-8
    for col in ("g", "h"):
        sums = pd.Series(res.residuals).groupby(df[col].to_numpy()).sum()
        assert sums.abs().max() < 1e-8


def test_demean_one_factor_is_group_centering():
    codes = np.array([0, 0, 1, 1, 1])
    out = demean(np.array([1.0, 3.0, 2.0, 4.0, 9.0]), [codes])
    assert out == pytest.approx([-1.0, 1.0, -3.0, -1.0, 4.0])


def test_fe_dof_counts_components():
    a = np.array([0, 0, 1, 1])
    b = np.array([0, 1, 0, 1])
    assert fe_dof([a]) == 2
    assert fe_dof([a, b]) == 3
    disjoint_a = np.array([0, 1, 2, 3])
    disjoint_b = np.array([0, 0, 1, 1])
    assert fe_dof([disjoint_a, disjoint_b]) == 4


def test_hand_computed_cluster_sandwich():
    # intercept-only: beta = mean 7, residuals (-6,-5,-4,3,4,8); cluster sums -15 and 15
    # V = G/(G-1) * (N-1)/(N-K) * (1/N^2) * (15^2 + 15^2) = 2 * 1 * 450 / 36 = 25
    df = pd.DataFrame({"y": [1.0, 2, 3, 10, 11, 15], "c": [0, 0, 0, 1, 1, 1]})
    res = ols(RegressionSpec("y", [], cluster="c"), df)
    assert res["const"] == pytest.approx(7.0, abs=1e-12)
    assert res.se_of("const") == pytest.approx(5.0, abs=1e-10)


def test_six_row_two_cluster_sandwich_matches_oracle():
    x = np.array([[1.0, 0.5], [1.0, -1.0], [1.0, 2.0], [1.0, 0.0], [1.0, 1.5], [1.0, -0.5]])
    y = np.array([1.0, -2.0, 3.5, 0.2, 2.0, -0.4])
    groups = ["a", "a", "a", "b", "b", "b"]
    df = pd.DataFrame({"x": x[:, 1], "y": y, "c": groups})
    res = ols(RegressionSpec("y", ["x"], cluster="c"), df)
    beta = np.linalg.solve(x.T @ x, x.T @ y)
    e = y - x @ beta
    expected = sandwich(x, e, groups, 2)
    order = [1, 0]  # production puts the constant last
    assert np.allclose(res.vcov, expected[np.ix_(order, order)], atol=1e-10, rtol=0)
    assert np.allclose(cluster_se(res, groups), np.sqrt(np.diag(expected))[order], atol=1e-10, rtol=0)


def test_singleton_clusters_equal_hc1():
    rng = np.random.default_rng(2)
    n = 40
    x = np.column_stack([rng.normal(size=n), rng.normal(size=n), np.ones(n)])
    e = rng.normal(size=n) * (1 + np.abs(x[:, 0]))
    v = cluster_vcov(x, e, np.arange(n))
    assert np.allclose(v, hc1(x, e), atol=1e-10, rtol=0)


def test_one_cluster_is_an_error():
    x = np.ones((5, 1))
    with pytest.raises(ValueError, match="2 clusters"):
        cluster_vcov(x, np.arange(5.0), np.zeros(5))


def test_singular_design_is_an_error():
    with pytest.raises(np.linalg.LinAlgError):
        cluster_vcov(np.ones((6, 2)), np.arange(6.0), [0, 0, 0, 1, 1, 1])


def test_collinearity_names_columns():
    df = pd.DataFrame({"a": [1.0, 2, 3, 4, 5], "y": [1.0, 3, 2, 5, 4]})
    df["b"] = 2 * df["a"]
    with pytest.raises(CollinearityError, match="b"):
        ols(RegressionSpec("y", ["a", "b"]), df)
    df["g"] = [0, 0, 1, 1, 1]
    df["c"] = df["g"] * 3.0
    with pytest.raises(CollinearityError, match="c"):
        ols(RegressionSpec("y", ["a", "c"], fixed_effects=["g"]), df)


def test_empty_data_is_an_error():
    with pytest.raises(ValueError):
        ols(RegressionSpec("y", ["x"]), pd.DataFrame({"y": [np.nan], "x": [1.0]}))


def test_classical_se_matches_textbook():
    rng = np.random.default_rng(4)
    df = pd.DataFrame({"x": rng.normal(size=30)})
    df["y"] = 0.3 * df["x"] + rng.normal(size=30)
    res = ols(RegressionSpec("y", ["x"]), df)
    x = np.column_stack([df["x"], np.ones(30)])
    e = res.residuals
    v = e @ e / 28 * np.linalg.inv(x.T @ x)
    assert res.se == pytest.approx(np.sqrt(np.diag(v)), abs=1e-12)
    assert res.adj_r2 == pytest.approx(1 - (1 - res.r2) * 29 / 28)


@pytest.mark.parametrize("b,expected", [((14.870, -2.658), 2.797), ((2.0, -1.0), 1.0), ((0.0, -1.0), 0.0)])
def test_implied_peak(b, expected):
    assert implied_peak(b) == pytest.approx(expected, abs=5e-4)


def test_implied_peak_requires_concavity():
    with pytest.raises(ValueError):
        implied_peak((1.0, 0.5))


def test_stars():
    assert [stars(p) for p in (0.001, 0.03, 0.07, 0.2)] == ["***", "**", "*", ""]


def test_wage_models_on_synthetic_profiles():
    rng = np.random.default_rng(8)
    occs, profiles = [], []
    for i in range(60):
        soc = f"{11 + i % 4}-{1000 + i:04d}.00"
        sen = rng.uniform(1.5, 4.5)
        lsal = rng.normal(11, 0.4)
        rl = 5 + 3 * lsal + 8 * sen - 1.5 * sen**2 + rng.normal()
        occs.append(OccupationScore(soc, f"Occ {i}", rl, rl, 5, 0.0, soc[:2]))
        profiles.append(OccupationProfile(soc, lsal, sen, 100, None))
    frame, dropped = occupation_frame(occs + [OccupationScore("99-0000.00", "x", 1, 1, 1, 0, "99")], profiles)
    assert dropped == ["99-0000.00"] and len(frame) == 60
    models = wage_seniority_models(frame)
    assert "const" in models["ols"].names and "const" not in models["soc_major_fe"].names
    assert implied_peak(models["ols"]) == pytest.approx(8 / 3, abs=0.5)
    assert models["soc_major_fe"].r2 >= models["ols"].r2 - 1e-12


# --------------------------------------------------------------------------
# panel designs


def test_noiseless_did_recovers_delta():
    periods = month_range("2021-09", "2025-11")
    df, exposure = synthetic_panel(60, periods, -0.05, "2022-11", np.random.default_rng(1))
    res = did(df, exposure, "2022-11", periods)
    assert res.delta == pytest.approx(-0.05, abs=1e-10)
    assert res.regression.n_obs == 60 * 51 and res.regression.n_clusters == 60
    design = res.design.frame.drop_duplicates("soc_code")
    assert design["exposure"].mean() == pytest.approx(0.0, abs=1e-12)
    assert design["exposure"].std(ddof=1) == pytest.approx(1.0, abs=1e-12)


def test_noisy_did_within_three_se():
    periods = month_range("2021-01", "2024-12")
    df, exposure = synthetic_panel(500, periods, -0.05, "2022-11", np.random.default_rng(2), noise=0.2)
    res = did(df, exposure, "2022-11", periods)
    assert abs(res.delta + 0.05) < 3 * res.se


def test_unbalanced_and_unexposed_occupations_are_dropped():
    periods = month_range("2022-01", "2022-12")
    df, exposure = synthetic_panel(10, periods, -0.05, "2022-06", np.random.default_rng(3))
    df = df[~((df["soc_code"] == df["soc_code"].iloc[0]) & (df["period"] == "2022-03"))]
    last = sorted(exposure)[-1]
    exposure.pop(last)
    design = prepare_panel(df, exposure, periods)
    assert len(design.dropped_unbalanced) == 1 and design.dropped_no_exposure == [last]
    assert design.frame["soc_code"].nunique() == 8


def test_did_needs_two_clusters():
    periods = month_range("2022-01", "2022-06")
    df, exposure = synthetic_panel(3, periods, 0.0, "2022-03", np.random.default_rng(0))
    keep = df["soc_code"] == df["soc_code"].iloc[0]
    with pytest.raises(ValueError):
        did(df[keep], exposure, "2022-03", periods)


def test_event_study_noiseless():
    periods = month_range("2022-01", "2023-12")
    cutoff, reference = "2022-11", "2022-10"
    df, exposure = synthetic_panel(40, periods, -0.04, cutoff, np.random.default_rng(6))
    es = event_study(df, exposure, reference, periods)
    ref = es.periods.index(reference)
    assert es.coef[ref] == 0.0 and es.se[ref] == 0.0
    assert f"exp_{reference}" not in es.regression.names
    for p, b in zip(es.periods, es.coef):
        assert b == pytest.approx(-0.04 if p >= cutoff else 0.0, abs=1e-10)
    dd = did(df, exposure, cutoff, periods)
    post = [b for p, b in zip(es.periods, es.coef) if p >= cutoff]
    assert np.mean(post) == pytest.approx(dd.delta, abs=1e-10)
    assert (es.ci_lo <= es.coef).all() and (es.coef <= es.ci_hi).all()
    assert [r["period"] for r in es.rows()] == periods


def test_event_study_reference_must_exist():
    periods = month_range("2022-01", "2022-06")
    df, exposure = synthetic_panel(5, periods, 0.0, "2022-03", np.random.default_rng(0))
    with pytest.raises(ValueError):
        event_study(df, exposure, "2021-01", periods)


def test_t_pvalues_option():
    periods = month_range("2022-01", "2022-12")
    df, exposure = synthetic_panel(30, periods, -0.05, "2022-06", np.random.default_rng(7), noise=0.3)
    a = did(df, exposure, "2022-06", periods)
    b = did(df, exposure, "2022-06", periods, cluster_pvalues="t")
    assert a.delta == b.delta and a.se == b.se
    assert b.pvalue >= a.pvalue
