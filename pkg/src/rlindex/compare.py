"""Occupation-level comparison of the RL index with task-level beta labels."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .index import TaskScore, aggregate_occupation, importance_weights
from .ingest import BetaRecord, TaskRecord

logger = logging.getLogger(__name__)

QUADRANTS = ("HH", "HL", "LH", "LL")


@dataclass(frozen=True)
class ComparisonRow:
    """One occupation on both axes.

    Ranks are ascending (1 = lowest value) with average ranks for ties, so a
    positive ``rank_gap`` means relatively high beta and low RL.  The
    quadrant code is beta level then RL level, e.g. ``"LH"`` is low beta,
    high RL.
    """

    soc_code: str
    occupation_title: str
    rl_weighted: float
    beta_weighted: float
    rl_rank: float
    beta_rank: float
    rank_gap: float
    quadrant: str


@dataclass
class BetaAggregate:
    values: dict[str, float]
    matched_tasks: int = 0
    unmatched_beta: int = 0
    tasks_without_beta: int = 0
    excluded_occupations: list[str] = field(default_factory=list)

    def diagnostics(self) -> dict:
        d = asdict(self)
        d.pop("values")
        d["n_occupations"] = len(self.values)
        return d


@dataclass(frozen=True)
class Correlation:
    pearson: float
    spearman: float
    n: int


def aggregate_beta(beta: Iterable[BetaRecord], tasks: Iterable[TaskRecord]) -> BetaAggregate:
    """Importance-weighted mean beta per occupation over matched tasks."""
    tasks = list(tasks)
    task_keys = {t.key: t for t in tasks}
    by_soc: dict[str, list[tuple[float, float | None]]] = defaultdict(list)
    unmatched = 0
    matched_keys = set()
    for b in beta:
        t = task_keys.get(b.key)
        if t is None:
            unmatched += 1
            continue
        matched_keys.add(b.key)
        by_soc[b.soc_code].append((b.beta, t.importance))
    values = {}
    for soc, pairs in sorted(by_soc.items()):
        w = importance_weights([imp for _, imp in pairs])
        values[soc] = float(w @ np.array([v for v, _ in pairs]))
    excluded = sorted({t.soc_code for t in tasks} - set(values))
    if excluded:
        logger.warning("%d occupations have no matched beta tasks and are excluded", len(excluded))
    return BetaAggregate(
        values=values,
        matched_tasks=len(matched_keys),
        unmatched_beta=unmatched,
        tasks_without_beta=len(task_keys) - len(matched_keys),
        excluded_occupations=excluded,
    )


def average_ranks(values: Sequence[float]) -> np.ndarray:
    return rankdata(np.asarray(values, dtype=float), method="average")


def build_rows(rl: dict[str, tuple[str, float]], beta: dict[str, float]) -> list[ComparisonRow]:
    """Join ``{soc: (title, rl_weighted)}`` with ``{soc: beta_weighted}`` and rank both."""
    socs = sorted(set(rl) & set(beta))
    if not socs:
        return []
    rl_vals = np.array([rl[s][1] for s in socs])
    beta_vals = np.array([beta[s] for s in socs])
    rl_rank, beta_rank = average_ranks(rl_vals), average_ranks(beta_vals)
    rl_med, beta_med = np.median(rl_vals), np.median(beta_vals)
    rows = []
    for i, s in enumerate(socs):
        quad = ("H" if beta_vals[i] > beta_med else "L") + ("H" if rl_vals[i] > rl_med else "L")
        rows.append(ComparisonRow(s, rl[s][0], float(rl_vals[i]), float(beta_vals[i]),
                                  float(rl_rank[i]), float(beta_rank[i]),
                                  float(beta_rank[i] - rl_rank[i]), quad))
    return rows


def compare_indices(
    scores: Sequence[TaskScore],
    tasks: Sequence[TaskRecord],
    beta: Sequence[BetaRecord],
    subset: str = "all",
) -> tuple[list[ComparisonRow], BetaAggregate]:
    """Occupation rows for the full task set or rebuilt from gate-passing tasks only.

    With ``subset="gate_passing"`` both aggregates are recomputed from the
    tasks that pass the physical gate (and carry a beta label), so
    occupations with no such task drop out.
    """
    if subset not in ("all", "gate_passing"):
        raise ValueError(f"unknown subset {subset!r}")
    if subset == "gate_passing":
        keep = {s.key for s in scores if s.gate_pass}
        scores = [s for s in scores if s.key in keep]
        tasks = [t for t in tasks if t.key in keep]
        beta = [b for b in beta if b.key in keep]
    occs = aggregate_occupation(scores, tasks)
    agg = aggregate_beta(beta, tasks)
    rl = {o.soc_code: (o.occupation_title, o.rl_weighted) for o in occs}
    return build_rows(rl, agg.values), agg


def correlations(rows: Sequence[ComparisonRow]) -> Correlation:
    if len(rows) < 3:
        raise ValueError("need at least three rows to correlate")
    x = np.array([r.beta_weighted for r in rows])
    y = np.array([r.rl_weighted for r in rows])
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("zero variance on one axis")
    pearson = float(np.corrcoef(x, y)[0, 1])
    spearman = float(np.corrcoef(average_ranks(x), average_ranks(y))[0, 1])
    return Correlation(pearson, spearman, len(rows))


def _iqr(x: np.ndarray) -> float:
    q75, q25 = np.percentile(x, [75, 25])
    if q75 - q25 > 0:
        return float(q75 - q25)
    sd = float(x.std())
    return sd if sd > 0 else 1.0


def quadrants(rows: Sequence[ComparisonRow], k: int = 5) -> dict[str, list[dict]]:
    """Top-``k`` rows per quadrant by IQR-scaled distance from the median point."""
    if len(rows) < 4:
        raise ValueError("need at least four rows for a median split")
    x = np.array([r.beta_weighted for r in rows])
    y = np.array([r.rl_weighted for r in rows])
    dist = np.hypot((x - np.median(x)) / _iqr(x), (y - np.median(y)) / _iqr(y))
    out: dict[str, list[dict]] = {}
    for q in QUADRANTS:
        idx = [i for i, r in enumerate(rows) if r.quadrant == q]
        idx.sort(key=lambda i: (-dist[i], rows[i].soc_code))
        out[q] = [{**asdict(rows[i]), "distance": float(dist[i])} for i in idx[:k]]
    return out


def quadrant_counts(rows: Sequence[ComparisonRow]) -> dict[str, int]:
    return {q: sum(r.quadrant == q for r in rows) for q in QUADRANTS}


def divergence(rows: Sequence[ComparisonRow], k: int = 10) -> dict[str, list[ComparisonRow]]:
    """Largest positive and negative rank gaps, ties by occupation code."""
    pos = sorted(rows, key=lambda r: (-r.rank_gap, r.soc_code))[:k]
    neg = sorted(rows, key=lambda r: (r.rank_gap, r.soc_code))[:k]
    return {"beta_over_rl": pos, "rl_over_beta": neg}
