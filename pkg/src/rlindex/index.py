"""Task-level RL feasibility scores and importance-weighted occupation aggregates."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .ingest import TaskRecord
from .rubric import DIMENSIONS, AnnotationResult

logger = logging.getLogger(__name__)

# One point on one dimension moves the index by 100 / (8 * 9).
POINT_SLOPE = 100.0 / 72.0


@dataclass(frozen=True)
class TaskScore:
    soc_code: str
    task_id: int
    gate_pass: bool
    dimension_scores: tuple[int, ...] | None
    rl_index: float

    @property
    def key(self) -> tuple[str, int]:
        return (self.soc_code, self.task_id)


@dataclass(frozen=True)
class OccupationScore:
    soc_code: str
    occupation_title: str
    rl_weighted: float
    rl_unweighted: float
    n_tasks: int
    gate_fail_share: float
    soc_major: str


@dataclass(frozen=True)
class DimensionStats:
    dimension: str
    n: int
    mean: float
    sd: float
    p25: float
    median: float
    p75: float


def rl_index(scores: Sequence[float]) -> float:
    """Rescale the mean of eight 1-10 scores to 0-100."""
    mean = sum(scores) / len(scores)
    return (mean - 1.0) / 9.0 * 100.0


def compute_task_index(a: AnnotationResult) -> TaskScore:
    if not a.gate_pass:
        return TaskScore(a.soc_code, a.task_id, False, None, 0.0)
    vec = tuple(a.dimension_scores[d] for d in DIMENSIONS)
    return TaskScore(a.soc_code, a.task_id, True, vec, rl_index(vec))


def importance_weights(importances: Sequence[float | None]) -> np.ndarray:
    """Normalized weights; a missing rating counts as 1.0."""
    w = np.array([1.0 if v is None else float(v) for v in importances])
    return w / w.sum()


def _group(scores: Iterable[TaskScore], tasks: Iterable[TaskRecord]):
    lookup = {t.key: t for t in tasks}
    groups: dict[str, list[tuple[TaskScore, TaskRecord]]] = defaultdict(list)
    for s in scores:
        t = lookup.get(s.key)
        if t is None:
            raise KeyError(f"score {s.key} has no matching task record")
        groups[s.soc_code].append((s, t))
    return groups


def aggregate_occupation(scores: Iterable[TaskScore], tasks: Iterable[TaskRecord]) -> list[OccupationScore]:
    """Importance-weighted and plain mean index per occupation, sorted by code."""
    out = []
    for soc, pairs in sorted(_group(scores, tasks).items()):
        rl = np.array([s.rl_index for s, _ in pairs])
        imps = [t.importance for _, t in pairs]
        if all(v is None for v in imps) and len(imps) > 1:
            logger.warning("%s: no importance ratings, using equal weights", soc)
        w = importance_weights(imps)
        weighted = float(np.clip(w @ rl, rl.min(), rl.max()))
        out.append(
            OccupationScore(
                soc_code=soc,
                occupation_title=pairs[0][1].occupation_title,
                rl_weighted=weighted,
                rl_unweighted=float(rl.mean()),
                n_tasks=len(pairs),
                gate_fail_share=sum(not s.gate_pass for s, _ in pairs) / len(pairs),
                soc_major=soc[:2],
            )
        )
    return out


def describe(values: Sequence[float]) -> dict:
    """N, mean, sample SD (0 for a single value) and linear-interpolated percentiles."""
    x = np.asarray(values, dtype=float)
    q = np.percentile(x, [10, 25, 50, 75, 90])
    return {
        "n": int(x.size),
        "mean": float(x.mean()),
        "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
        "min": float(x.min()),
        "p10": float(q[0]),
        "p25": float(q[1]),
        "median": float(q[2]),
        "p75": float(q[3]),
        "p90": float(q[4]),
        "max": float(x.max()),
    }


def dimension_stats(scores: Iterable[TaskScore]) -> list[DimensionStats]:
    mat = np.array([s.dimension_scores for s in scores if s.gate_pass], dtype=float)
    if mat.size == 0:
        return []
    out = []
    for j, d in enumerate(DIMENSIONS):
        col = mat[:, j]
        p25, med, p75 = np.percentile(col, [25, 50, 75])
        out.append(DimensionStats(d, col.size, float(col.mean()),
                                  float(col.std(ddof=1)) if col.size > 1 else 0.0,
                                  float(p25), float(med), float(p75)))
    return out


def summarize(scores: Sequence[TaskScore], occs: Sequence[OccupationScore], top_k: int = 10) -> dict:
    """Descriptive report at task and occupation level."""
    if not scores or not occs:
        raise ValueError("summarize needs at least one task score and one occupation")
    task_rl = [s.rl_index for s in scores]
    passing = [s.rl_index for s in scores if s.gate_pass]
    by_group: dict[str, list[float]] = defaultdict(list)
    for o in occs:
        by_group[o.soc_major].append(o.rl_weighted)

    ranked = sorted(occs, key=lambda o: (-o.rl_weighted, o.soc_code))
    bottom = sorted(occs, key=lambda o: (o.rl_weighted, o.soc_code))

    def row(o: OccupationScore) -> dict:
        return {"soc_code": o.soc_code, "occupation_title": o.occupation_title, "rl_weighted": o.rl_weighted}

    return {
        "task": describe(task_rl),
        "task_zero_share": float(np.mean([v == 0.0 for v in task_rl])),
        "task_gate_fail_share": float(np.mean([not s.gate_pass for s in scores])),
        "task_gate_pass_n": len(passing),
        "task_gate_pass_mean": float(np.mean(passing)) if passing else None,
        "occupation": describe([o.rl_weighted for o in occs]),
        "occupation_unweighted": describe([o.rl_unweighted for o in occs]),
        "weighted_unweighted_corr": _safe_corr([o.rl_weighted for o in occs], [o.rl_unweighted for o in occs]),
        "soc_major_means": {g: float(np.mean(v)) for g, v in sorted(by_group.items())},
        "dimensions": [d.__dict__ for d in dimension_stats(scores)],
        "top": [row(o) for o in ranked[:top_k]],
        "bottom": [row(o) for o in bottom[:top_k]],
    }


def _safe_corr(a: Sequence[float], b: Sequence[float]) -> float | None:
    if len(a) < 2 or np.std(a) == 0 or np.std(b) == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])
