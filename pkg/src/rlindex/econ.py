"""Least squares with absorbed fixed effects and cluster-robust inference.

Fixed effects are removed by alternating within-group demeaning (one pass
suffices for a single factor or a balanced two-way layout); an explicit
dummy-variable fit is available as ``fe_method="dummies"`` for checking.
Clustered covariance is the one-way sandwich with the CR1 small-sample
factor ``G/(G-1) * (N-1)/(N-K)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .ingest import OccupationProfile
from .index import OccupationScore

logger = logging.getLogger(__name__)

FixedEffect = str | tuple[str, ...]


class CollinearityError(ValueError):
    def __init__(self, columns: Sequence[str]):
        super().__init__(f"collinear regressors: {', '.join(columns)}")
        self.columns = list(columns)


@dataclass
class RegressionSpec:
    outcome: str
    regressors: list[str]
    fixed_effects: list[FixedEffect] = field(default_factory=list)
    cluster: str | None = None
    standardize: list[str] = field(default_factory=list)
    constant: bool = True  # ignored when fixed effects are absorbed
    cluster_pvalues: str = "normal"  # or "t" for t(G-1)

    def factors(self) -> list[str]:
        out = []
        for fe in self.fixed_effects:
            out.extend([fe] if isinstance(fe, str) else list(fe))
        return out


@dataclass
class RegressionResult:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    pvalue: np.ndarray
    r2: float
    adj_r2: float
    within_r2: float | None
    n_obs: int
    n_clusters: int | None
    df_resid: int
    vcov: np.ndarray
    residuals: np.ndarray
    design: np.ndarray
    fe_dof: int = 0
    se_type: str = "classical"
    cluster_codes: np.ndarray | None = None
    n_params_adj: int = 0

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self.names.index(name)])

    def table(self) -> list[dict]:
        return [
            {"term": n, "coef": float(b), "se": float(s), "t": float(t), "p": float(p), "stars": stars(p)}
            for n, b, s, t, p in zip(self.names, self.coef, self.se, self.tstat, self.pvalue)
        ]

    def summary(self) -> dict:
        return {
            "coefficients": self.table(),
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "within_r2": self.within_r2,
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "df_resid": self.df_resid,
            "fe_dof": self.fe_dof,
            "se_type": self.se_type,
        }


def stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


# --------------------------------------------------------------------------
# fixed effects


def _fe_codes(data: pd.DataFrame, fe: FixedEffect) -> np.ndarray:
    cols = [fe] if isinstance(fe, str) else list(fe)
    if len(cols) == 1:
        return pd.factorize(data[cols[0]], sort=True)[0]
    return data.groupby(cols, sort=True).ngroup().to_numpy()


def demean(arr: np.ndarray, codes: Sequence[np.ndarray], tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Sweep out group means for every factor until the change is below ``tol``."""
    out = np.array(arr, dtype=float, copy=True)
    squeeze = out.ndim == 1
    if squeeze:
        out = out[:, None]
    counts = [np.bincount(c) for c in codes]
    scale = max(1.0, float(np.abs(out).max(initial=0.0)))
    for sweep in range(max_iter):
        before = out.copy() if len(codes) > 1 else None
        for c, n in zip(codes, counts):
            for j in range(out.shape[1]):
                out[:, j] -= (np.bincount(c, weights=out[:, j], minlength=n.size) / n)[c]
        if before is None or np.abs(out - before).max() <= tol * scale:
            break
    else:
        logger.warning("fixed-effect demeaning did not converge in %d sweeps", max_iter)
    return out[:, 0] if squeeze else out


def fe_dof(codes: Sequence[np.ndarray]) -> int:
    """Parameters absorbed by the fixed effects.

    Exact for one or two factors (levels minus connected components of the
    bipartite level graph); for more factors one redundancy per extra
    factor is assumed.
    """
    if not codes:
        return 0
    levels = [int(c.max()) + 1 for c in codes]
    if len(codes) == 1:
        return levels[0]
    if len(codes) == 2:
        a, b = codes
        n = levels[0] + levels[1]
        g = coo_matrix((np.ones(a.size), (a, b + levels[0])), shape=(n, n))
        ncomp, _ = connected_components(g, directed=False)
        return n - ncomp
    return sum(levels) - (len(codes) - 1)


def _nested(codes: np.ndarray, clusters: np.ndarray) -> bool:
    """True when every level of ``codes`` falls inside a single cluster."""
    pairs = np.unique(np.column_stack([codes, clusters]), axis=0)
    return pairs.shape[0] == np.unique(codes).size


def _dummies(codes: Sequence[np.ndarray]) -> np.ndarray:
    blocks = []
    for c in codes:
        d = np.zeros((c.size, int(c.max()) + 1))
        d[np.arange(c.size), c] = 1.0
        blocks.append(d)
    return np.hstack(blocks)


def _collinear_columns(x: np.ndarray, names: Sequence[str]) -> list[str]:
    bad, kept = [], []
    for j, name in enumerate(names):
        trial = x[:, kept + [j]]
        if np.linalg.matrix_rank(trial) < len(kept) + 1:
            bad.append(name)
        else:
            kept.append(j)
    return bad


# --------------------------------------------------------------------------
# estimation


def cluster_vcov(x: np.ndarray, resid: np.ndarray, clusters, n_params: int | None = None) -> np.ndarray:
    """CR1 cluster-robust covariance ``c * (X'X)^-1 (sum_g X_g'e_g e_g'X_g) (X'X)^-1``.

    ``n_params`` is the K in ``(N-1)/(N-K)``; it defaults to the number of
    columns of ``x``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    codes = pd.factorize(np.asarray(clusters), sort=True)[0]
    g = int(codes.max()) + 1 if codes.size else 0
    if g < 2:
        raise ValueError(f"clustered covariance needs at least 2 clusters (got {g})")
    n, k = x.shape
    k_adj = k if n_params is None else n_params
    xtx_inv = _inv(x.T @ x)
    u = x * np.asarray(resid, dtype=float)[:, None]
    sums = np.column_stack([np.bincount(codes, weights=u[:, j], minlength=g) for j in range(k)])
    meat = sums.T @ sums
    factor = g / (g - 1) * (n - 1) / (n - k_adj)
    v = factor * xtx_inv @ meat @ xtx_inv
    return (v + v.T) / 2


def _inv(m: np.ndarray) -> np.ndarray:
    if m.size and np.linalg.cond(m) > 1e14:
        raise np.linalg.LinAlgError("X'X is singular")
    return np.linalg.inv(m)


def cluster_se(result: RegressionResult, clusters) -> np.ndarray:
    """Clustered standard errors for an existing fit's design and residuals."""
    v = cluster_vcov(result.design, result.residuals, clusters, result.n_params_adj or None)
    return np.sqrt(np.diag(v))


def ols(spec: RegressionSpec, data: pd.DataFrame, fe_method: str = "demean",
        tol: float = 1e-10, max_iter: int = 200) -> RegressionResult:
    """Least squares per ``spec``; see the module docstring for conventions."""
    needed = [spec.outcome, *spec.regressors, *spec.factors()]
    if spec.cluster:
        needed.append(spec.cluster)
    missing = [c for c in dict.fromkeys(needed) if c not in data.columns]
    if missing:
        raise KeyError(f"columns not in data: {', '.join(missing)}")
    df = data.loc[:, list(dict.fromkeys(needed))].dropna()
    if df.empty:
        raise ValueError("no complete observations")
    n = len(df)

    y_raw = df[spec.outcome].to_numpy(dtype=float)
    x_raw = df[spec.regressors].to_numpy(dtype=float).reshape(n, len(spec.regressors))
    names = list(spec.regressors)
    for col in spec.standardize:
        j = names.index(col)
        x_raw[:, j] = (x_raw[:, j] - x_raw[:, j].mean()) / x_raw[:, j].std(ddof=1)

    codes = [_fe_codes(df, fe) for fe in spec.fixed_effects]
    absorbed = fe_dof(codes)

    if not codes:
        if spec.constant:
            x_raw = np.column_stack([x_raw, np.ones(n)])
            names.append("const")
        x, y = x_raw, y_raw
        bad = _collinear_columns(x, names)
        if bad:
            raise CollinearityError(bad)
        coef = np.linalg.lstsq(x, y, rcond=None)[0]
        resid = y - x @ coef
        within_r2 = None
    elif fe_method == "demean":
        y = demean(y_raw, codes, tol, max_iter)
        x = demean(x_raw, codes, tol, max_iter) if x_raw.shape[1] else x_raw
        bad = [nm for j, nm in enumerate(names) if np.abs(x[:, j]).max() <= 1e-9 * max(1.0, np.abs(x_raw[:, j]).max())]
        bad += [nm for nm in _collinear_columns(x, names) if nm not in bad]
        if bad:
            raise CollinearityError(bad)
        coef = np.linalg.lstsq(x, y, rcond=None)[0]
        resid = y - x @ coef
        within_r2 = 1.0 - resid @ resid / (y @ y) if y @ y > 0 else None
    elif fe_method == "dummies":
        d = _dummies(codes)
        full = np.column_stack([x_raw, d])
        sol = np.linalg.lstsq(full, y_raw, rcond=None)[0]
        coef = sol[: len(names)]
        resid = y_raw - full @ sol
        absorbed = int(np.linalg.matrix_rank(d))
        # slopes' design after partialling out the dummies, for the covariance
        proj = d @ np.linalg.lstsq(d, x_raw, rcond=None)[0]
        x = x_raw - proj
        y = y_raw - d @ np.linalg.lstsq(d, y_raw, rcond=None)[0]
        within_r2 = 1.0 - resid @ resid / (y @ y) if y @ y > 0 else None
    else:
        raise ValueError(f"unknown fe_method {fe_method!r}")

    k = x.shape[1]
    k_total = k + absorbed
    df_resid = n - k_total
    if df_resid <= 0:
        raise ValueError(f"no residual degrees of freedom (N={n}, K={k_total})")
    ssr = float(resid @ resid)
    tss = float(((y_raw - y_raw.mean()) ** 2).sum())
    r2 = 1.0 - ssr / tss if tss > 0 else float("nan")
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / df_resid if tss > 0 else float("nan")

    cluster_codes = None
    n_clusters = None
    n_params_adj = k_total
    if spec.cluster:
        cluster_codes = pd.factorize(df[spec.cluster], sort=True)[0]
        n_clusters = int(cluster_codes.max()) + 1
        nested = sum(int(c.max()) + 1 for c in codes if _nested(c, cluster_codes))
        n_params_adj = k_total - nested
        vcov = cluster_vcov(x, resid, cluster_codes, n_params_adj)
        se = np.sqrt(np.diag(vcov))
        tstat = coef / se
        if spec.cluster_pvalues == "t":
            pvalue = 2 * stats.t.sf(np.abs(tstat), n_clusters - 1)
        else:
            pvalue = 2 * stats.norm.sf(np.abs(tstat))
        se_type = "cluster"
    else:
        vcov = ssr / df_resid * _inv(x.T @ x)
        se = np.sqrt(np.diag(vcov))
        tstat = coef / se
        pvalue = 2 * stats.t.sf(np.abs(tstat), df_resid)
        se_type = "classical"

    return RegressionResult(
        names=names, coef=coef, se=se, tstat=tstat, pvalue=pvalue,
        r2=r2, adj_r2=adj_r2, within_r2=within_r2, n_obs=n, n_clusters=n_clusters,
        df_resid=df_resid, vcov=vcov, residuals=resid, design=x, fe_dof=absorbed,
        se_type=se_type, cluster_codes=cluster_codes, n_params_adj=n_params_adj,
    )


def implied_peak(result: RegressionResult | tuple[float, float],
                 linear: str = "seniority", quadratic: str = "seniority_sq") -> float:
    """Turning point ``-b_linear / (2 b_quad)`` of a concave quadratic."""
    if isinstance(result, tuple):
        b1, b2 = result
    else:
        b1, b2 = result[linear], result[quadratic]
    if not b2 < 0:
        raise ValueError(f"quadratic coefficient {b2} is not negative; no interior maximum")
    return -b1 / (2.0 * b2)


# --------------------------------------------------------------------------
# occupation-level wage / seniority regressions


def occupation_frame(occs: Iterable[OccupationScore], profiles: Iterable[OccupationProfile]) -> tuple[pd.DataFrame, list[str]]:
    """Join index and profiles; returns the frame and occupations lacking a profile."""
    prof = {p.soc_code: p for p in profiles}
    rows, dropped = [], []
    for o in occs:
        p = prof.get(o.soc_code)
        if p is None:
            dropped.append(o.soc_code)
            continue
        rows.append({
            "soc_code": o.soc_code,
            "soc_major": o.soc_major,
            "rl_index": o.rl_weighted,
            "log_salary": p.mean_log_salary,
            "seniority": p.mean_seniority,
            "seniority_sq": p.mean_seniority ** 2,
            "employment": p.employment_count,
        })
    return pd.DataFrame(rows), sorted(dropped)


WAGE_REGRESSORS = ["log_salary", "seniority", "seniority_sq"]
WAGE_SPECS = {
    "ols": RegressionSpec("rl_index", WAGE_REGRESSORS),
    "soc_major_fe": RegressionSpec("rl_index", WAGE_REGRESSORS, fixed_effects=["soc_major"]),
}


def wage_seniority_models(frame: pd.DataFrame) -> dict[str, RegressionResult]:
    return {name: ols(spec, frame) for name, spec in WAGE_SPECS.items()}


# --------------------------------------------------------------------------
# difference-in-differences on the openings panel


@dataclass
class PanelDesign:
    frame: pd.DataFrame
    periods: list[str]
    dropped_unbalanced: list[str]
    dropped_no_exposure: list[str]
    exposure_mean: float
    exposure_sd: float


@dataclass
class DidResult:
    delta: float
    se: float
    pvalue: float
    regression: RegressionResult
    design: PanelDesign

    def summary(self) -> dict:
        d = self.regression.summary()
        d.update({
            "delta": self.delta, "se": self.se, "p": self.pvalue,
            "n_occupations": int(self.design.frame["soc_code"].nunique()),
            "n_periods": len(self.design.periods),
            "dropped_unbalanced": self.design.dropped_unbalanced,
            "dropped_no_exposure": self.design.dropped_no_exposure,
        })
        return d


@dataclass
class EventStudyResult:
    periods: list[str]
    coef: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    reference: str
    regression: RegressionResult
    design: PanelDesign

    def rows(self) -> list[dict]:
        return [
            {"period": p, "coef": float(b), "se": float(s), "ci_lo": float(lo), "ci_hi": float(hi)}
            for p, b, s, lo, hi in zip(self.periods, self.coef, self.se, self.ci_lo, self.ci_hi)
        ]


def prepare_panel(panel, exposure: dict[str, float], periods: Sequence[str] | None = None) -> PanelDesign:
    """Balanced occupation-month frame with standardized exposure.

    ``panel`` is a list of :class:`PanelObservation` or a frame with
    ``soc_code, period, job_openings``.  Occupations not observed with
    positive openings in every period, or without an exposure value, are
    dropped and reported.  Exposure is standardized across the remaining
    occupations (sample SD).
    """
    if isinstance(panel, pd.DataFrame):
        df = panel.loc[:, ["soc_code", "period", "job_openings"]].copy()
    else:
        df = pd.DataFrame([(o.soc_code, o.period, o.job_openings) for o in panel],
                          columns=["soc_code", "period", "job_openings"])
    if df.empty:
        raise ValueError("empty panel")
    periods = sorted(df["period"].unique()) if periods is None else list(periods)
    df = df[df["period"].isin(periods) & (df["job_openings"] > 0)]
    df = df.drop_duplicates(["soc_code", "period"])
    counts = df.groupby("soc_code")["period"].nunique()
    complete = set(counts.index[counts == len(periods)])
    unbalanced = sorted(set(df["soc_code"]) - complete)
    no_exp = sorted(s for s in complete if s not in exposure or not math.isfinite(exposure[s]))
    keep = sorted(complete - set(no_exp))
    if unbalanced:
        logger.info("dropping %d occupations not observed in all %d periods", len(unbalanced), len(periods))
    df = df[df["soc_code"].isin(keep)].sort_values(["soc_code", "period"]).reset_index(drop=True)

    raw = np.array([exposure[s] for s in keep], dtype=float)
    mu, sd = (float(raw.mean()), float(raw.std(ddof=1))) if raw.size > 1 else (0.0, 0.0)
    if not sd > 0:
        raise ValueError("exposure has no variation across panel occupations")
    z = dict(zip(keep, (raw - mu) / sd))
    df["exposure"] = df["soc_code"].map(z)
    df["soc2"] = df["soc_code"].str[:2]
    df["log_openings"] = np.log(df["job_openings"].astype(float))
    return PanelDesign(df, list(periods), unbalanced, no_exp, mu, sd)


def did(panel, exposure: dict[str, float], cutoff: str, periods: Sequence[str] | None = None,
        cluster_pvalues: str = "normal", fe_method: str = "demean") -> DidResult:
    """Post-cutoff x standardized exposure with occupation and SOC2 x month effects."""
    design = prepare_panel(panel, exposure, periods)
    df = design.frame
    if df["soc_code"].nunique() < 2:
        raise ValueError("fewer than 2 occupations (clusters) in the balanced panel")
    df["post_x_exposure"] = (df["period"] >= cutoff).astype(float) * df["exposure"]
    spec = RegressionSpec(
        "log_openings", ["post_x_exposure"],
        fixed_effects=["soc_code", ("soc2", "period")],
        cluster="soc_code", cluster_pvalues=cluster_pvalues,
    )
    res = ols(spec, df, fe_method=fe_method)
    return DidResult(res["post_x_exposure"], res.se_of("post_x_exposure"), float(res.pvalue[0]), res, design)


def event_study(panel, exposure: dict[str, float], reference: str, periods: Sequence[str] | None = None,
                level: float = 0.95, cluster_pvalues: str = "normal") -> EventStudyResult:
    """Exposure interacted with every month except ``reference`` (coefficient fixed at 0)."""
    design = prepare_panel(panel, exposure, periods)
    df = design.frame
    if df["soc_code"].nunique() < 2:
        raise ValueError("fewer than 2 occupations (clusters) in the balanced panel")
    if reference not in design.periods:
        raise ValueError(f"reference period {reference} not in panel")
    others = [p for p in design.periods if p != reference]
    cols = {}
    for p in others:
        cols[f"exp_{p}"] = (df["period"] == p).to_numpy(dtype=float) * df["exposure"].to_numpy()
    df = pd.concat([df, pd.DataFrame(cols, index=df.index)], axis=1)
    spec = RegressionSpec(
        "log_openings", list(cols),
        fixed_effects=["soc_code", ("soc2", "period")],
        cluster="soc_code", cluster_pvalues=cluster_pvalues,
    )
    res = ols(spec, df)
    crit = stats.norm.ppf(0.5 + level / 2)
    if cluster_pvalues == "t":
        crit = stats.t.ppf(0.5 + level / 2, res.n_clusters - 1)
    coef = np.array([0.0 if p == reference else res[f"exp_{p}"] for p in design.periods])
    se = np.array([0.0 if p == reference else res.se_of(f"exp_{p}") for p in design.periods])
    return EventStudyResult(design.periods, coef, se, coef - crit * se, coef + crit * se, reference, res, design)
