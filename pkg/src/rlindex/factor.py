"""Dimensionality of the eight rubric dimensions.

PCA is run on the correlation matrix of gate-passing task scores; Horn's
parallel analysis compares its eigenvalues to the 95th percentile of
eigenvalues from standard-normal data of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rubric import DIMENSIONS


@dataclass
class PcaResult:
    eigenvalues: np.ndarray
    explained_pct: np.ndarray
    cumulative_pct: np.ndarray
    loadings: np.ndarray  # rows: dimensions, columns: components
    scores: np.ndarray | None = None
    labels: tuple[str, ...] = DIMENSIONS

    def kaiser(self) -> set[int]:
        """1-based components with eigenvalue above 1."""
        return {k + 1 for k, v in enumerate(self.eigenvalues) if v > 1.0}

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "eigenvalues": self.eigenvalues.tolist(),
            "explained_pct": self.explained_pct.tolist(),
            "cumulative_pct": self.cumulative_pct.tolist(),
            "loadings": self.loadings.tolist(),
            "kaiser_retained": sorted(self.kaiser()),
        }


@dataclass
class ParallelAnalysisResult:
    simulated_p95: np.ndarray
    retained: set[int]
    n_simulations: int
    seed: int
    n_obs: int
    quantile: float = 0.95
    observed: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "simulated_p95": self.simulated_p95.tolist(),
            "observed": None if self.observed is None else self.observed.tolist(),
            "retained": sorted(self.retained),
            "n_simulations": self.n_simulations,
            "n_obs": self.n_obs,
            "quantile": self.quantile,
            "seed": self.seed,
        }


def score_matrix(scores) -> np.ndarray:
    """n x 8 array of dimension scores from gate-passing TaskScores (or an array)."""
    if isinstance(scores, np.ndarray):
        return scores.astype(float)
    rows = [s.dimension_scores for s in scores if s.gate_pass]
    return np.array(rows, dtype=float).reshape(len(rows), len(DIMENSIONS))


def dimension_correlations(scores, labels=DIMENSIONS) -> np.ndarray:
    x = score_matrix(scores)
    if x.shape[0] < 2:
        raise ValueError("need at least two gate-passing tasks")
    sd = x.std(axis=0, ddof=1)
    flat = [labels[j] for j in np.flatnonzero(sd == 0)]
    if flat:
        raise ValueError(f"zero variance in dimension(s): {', '.join(flat)}")
    corr = np.corrcoef(x, rowvar=False)
    corr = (corr + corr.T) / 2
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def eigh_desc(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition, eigenvalues descending.

    Each eigenvector is signed so its largest-magnitude entry is positive.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, atol=1e-10, rtol=0):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((a + a.T) / 2)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean(axis=0)) / x.std(axis=0, ddof=1)


def pca(corr: np.ndarray, scores=None, n_components: int | None = None, labels=DIMENSIONS) -> PcaResult:
    """Principal components of a correlation matrix.

    If ``scores`` is given, the standardized data are projected onto the
    first ``n_components`` components (all by default).
    """
    vals, vecs = eigh_desc(corr)
    if vals[-1] < -1e-8:
        raise ValueError(f"matrix is not positive semidefinite (eigenvalue {vals[-1]:.3g})")
    vals = np.where(vals < 0, 0.0, vals)
    total = vals.sum()
    explained = 100.0 * vals / total
    projections = None
    if scores is not None:
        k = vecs.shape[1] if n_components is None else n_components
        projections = standardize(score_matrix(scores)) @ vecs[:, :k]
    return PcaResult(vals, explained, np.cumsum(explained), vecs, projections, tuple(labels))


def parallel_analysis(
    n_obs: int,
    n_vars: int = 8,
    n_sims: int = 1000,
    seed: int = 0,
    observed: np.ndarray | None = None,
    quantile: float = 0.95,
) -> ParallelAnalysisResult:
    """Horn's parallel analysis with one child seed per simulation.

    Components are retained from the top down while the observed
    eigenvalue exceeds the simulated quantile at the same rank (1-based);
    the first failure ends retention, so trailing ranks whose simulated
    quantile dips below the observed value are not picked up.
    """
    if n_sims < 100:
        raise ValueError("parallel analysis needs at least 100 simulations")
    children = np.random.SeedSequence(seed).spawn(n_sims)
    sims = np.empty((n_sims, n_vars))
    for i, child in enumerate(children):
        z = np.random.default_rng(child).standard_normal((n_obs, n_vars))
        sims[i] = np.sort(np.linalg.eigvalsh(np.corrcoef(z, rowvar=False)))[::-1]
    p = np.percentile(sims, 100 * quantile, axis=0)
    retained: set[int] = set()
    obs = None
    if observed is not None:
        obs = np.asarray(observed, dtype=float)
        for k in range(n_vars):
            if not obs[k] > p[k]:
                break
            retained.add(k + 1)
    return ParallelAnalysisResult(p, retained, n_sims, seed, n_obs, quantile, obs)


def cronbach_alpha(scores) -> float:
    x = score_matrix(scores)
    n, k = x.shape
    if k < 2 or n < 2:
        raise ValueError("Cronbach's alpha needs at least two items and two observations")
    total_var = x.sum(axis=1).var(ddof=1)
    if total_var == 0:
        raise ValueError("total score has zero variance")
    return k / (k - 1) * (1.0 - x.var(axis=0, ddof=1).sum() / total_var)


def biplot_points(result: PcaResult) -> tuple[np.ndarray, np.ndarray]:
    """Per-task PC1/PC2 coordinates and loading arrows scaled to the cloud."""
    if result.scores is None or result.scores.shape[1] < 2:
        raise ValueError("PCA result carries no PC1/PC2 projections")
    pts = result.scores[:, :2]
    arrows = result.loadings[:, :2]
    reach = np.abs(pts).max(axis=0)
    span = np.abs(arrows).max(axis=0)
    span[span == 0] = 1.0
    scale = 0.8 * float(np.min(reach / span))
    return pts, arrows * scale
