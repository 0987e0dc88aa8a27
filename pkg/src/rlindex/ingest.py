"""Readers for the task corpus, importance ratings, beta labels, occupation
profiles and the monthly job-openings panel.

All readers share the same conventions: UTF-8 input, a header row, comma or
tab delimiter (auto-detected unless given), and a rejects list instead of
silently dropping malformed rows.  Every reader returns ``(records, report)``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

SOC_PATTERN = re.compile(r"^\d{2}-\d{4}(\.\d{2})?$")
PERIOD_PATTERN = re.compile(r"^(\d{4})[-/](\d{1,2})(?:[-/]\d{1,2})?$")
BETA_VALUES = (0.0, 0.5, 1.0)

# Raw O*NET headers and a few common spellings, keyed by normalized header.
COLUMN_ALIASES = {
    "o_net_soc_code": "onet_soc_code",
    "onet_soc": "onet_soc_code",
    "soc_code": "onet_soc_code",
    "occupation_title": "title",
    "task_text": "task",
    "data_value": "importance",
    "gpt4_beta": "beta",
    "human_beta": "beta",
    "month": "period",
    "openings": "job_openings",
    "salary": "mean_salary",
    "seniority": "mean_seniority",
    "employment_count": "employment",
    "naics_sector": "naics2",
}

# Comment lines written by rlindex.artifacts ahead of a CSV header.
META_PREFIX = "#"


class MissingColumnError(ValueError):
    """A mandatory column is absent from an input file."""

    def __init__(self, column: str, path: str | Path):
        super().__init__(f"{path}: missing mandatory column {column!r}")
        self.column = column
        self.path = str(path)


@dataclass(frozen=True)
class TaskRecord:
    soc_code: str
    occupation_title: str
    task_id: int
    task_text: str
    importance: float | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.soc_code, self.task_id)


@dataclass(frozen=True)
class BetaRecord:
    soc_code: str
    task_id: int
    beta: float

    @property
    def key(self) -> tuple[str, int]:
        return (self.soc_code, self.task_id)


@dataclass(frozen=True)
class OccupationProfile:
    soc_code: str
    mean_log_salary: float
    mean_seniority: float
    employment_count: int
    naics_sector: str | None = None


@dataclass(frozen=True)
class PanelObservation:
    soc_code: str
    period: str  # "YYYY-MM"
    job_openings: int

    @property
    def soc2(self) -> str:
        return self.soc_code[:2]


@dataclass
class Reject:
    source: str
    line: int
    reason: str
    row: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)


@dataclass
class LoadReport:
    """Row accounting for one input file.

    ``n_rows == n_loaded + n_duplicates + n_skipped + len(rejects)`` always
    holds; ``n_skipped`` counts rows that are valid but filtered out (another
    O*NET scale, outside the panel window, zero openings).
    """

    source: str
    n_rows: int = 0
    n_loaded: int = 0
    n_duplicates: int = 0
    n_skipped: int = 0
    rejects: list[Reject] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def reject(self, line: int, reason: str, row: dict) -> None:
        self.rejects.append(Reject(self.source, line, reason, dict(row)))

    def balanced(self) -> bool:
        return self.n_rows == self.n_loaded + self.n_duplicates + self.n_skipped + len(self.rejects)


@dataclass
class CorpusReport:
    tasks: LoadReport
    importance: LoadReport | None
    n_missing_importance: int = 0

    @property
    def rejects(self) -> list[Reject]:
        out = list(self.tasks.rejects)
        if self.importance is not None:
            out.extend(self.importance.rejects)
        return out


def normalize_header(name: str) -> str:
    key = re.sub(r"[^0-9a-z]+", "_", name.strip().lower()).strip("_")
    return COLUMN_ALIASES.get(key, key)


def detect_delimiter(header_line: str) -> str:
    return "\t" if header_line.count("\t") > header_line.count(",") else ","


def iter_rows(path: str | Path, delimiter: str | None = None) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, row)`` with normalized column names.

    Leading ``#`` metadata lines are skipped, so files written by
    :mod:`rlindex.artifacts` read back directly.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        lines = _skip_meta(fh)
        first = next(lines, None)
        if first is None:
            return
        offset, header_line = first
        delim = delimiter or detect_delimiter(header_line)

        def chain() -> Iterator[str]:
            yield header_line
            for _, line in lines:
                yield line

        reader = csv.reader(chain(), delimiter=delim)
        header = [normalize_header(h) for h in next(reader)]
        for raw in reader:
            if not raw or all(not c.strip() for c in raw):
                continue
            line_no = reader.line_num + offset
            if len(raw) != len(header):
                yield line_no, {"__malformed__": raw}
                continue
            yield line_no, dict(zip(header, (c.strip() for c in raw)))


def _skip_meta(fh) -> Iterator[tuple[int, str]]:
    lineno = 0
    in_header = True
    for line in fh:
        lineno += 1
        if in_header and line.startswith(META_PREFIX):
            continue
        if in_header:
            in_header = False
            # csv line numbers restart at 1 on the header; keep the file's count
            yield lineno - 1, line
            continue
        yield lineno, line


def read_header(path: str | Path, delimiter: str | None = None) -> list[str]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for _, line in _skip_meta(fh):
            delim = delimiter or detect_delimiter(line)
            return [normalize_header(h) for h in next(csv.reader([line], delimiter=delim))]
    return []


def _require(path: str | Path, header: list[str], columns: Iterable[str]) -> None:
    for col in columns:
        if col not in header:
            raise MissingColumnError(col, path)


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise
        return int(value)


def _check_soc(text: str) -> str:
    if not SOC_PATTERN.match(text):
        raise ValueError(f"malformed occupation code {text!r}")
    return text


def parse_period(text: str) -> str:
    m = PERIOD_PATTERN.match(text.strip())
    if not m:
        raise ValueError(f"unparseable period {text!r}")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range in {text!r}")
    return f"{year:04d}-{month:02d}"


def month_range(start: str, end: str) -> list[str]:
    """Inclusive list of ``YYYY-MM`` periods from ``start`` to ``end``."""
    y, m = map(int, parse_period(start).split("-"))
    ey, em = map(int, parse_period(end).split("-"))
    out = []
    while (y, m) <= (ey, em):
        out.append(f"{y:04d}-{m:02d}")
        m += 1
        if m == 13:
            y, m = y + 1, 1
    return out


# --------------------------------------------------------------------------
# task corpus


def load_importance(path: str | Path, delimiter: str | None = None) -> tuple[dict, LoadReport]:
    """Importance ratings keyed by ``(soc_code, task_id)``.

    Accepts either the three-column importance file or the raw O*NET Task
    Ratings file, in which case only ``Scale ID == IM`` rows are used.
    """
    report = LoadReport(source=str(path))
    header = read_header(path, delimiter)
    _require(path, header, ("onet_soc_code", "task_id", "importance"))
    has_scale = "scale_id" in header
    out: dict[tuple[str, int], float] = {}
    for line, row in iter_rows(path, delimiter):
        report.n_rows += 1
        if "__malformed__" in row:
            report.reject(line, "wrong number of fields", row)
            continue
        if has_scale and row["scale_id"].upper() != "IM":
            report.n_skipped += 1
            continue
        try:
            soc = _check_soc(row["onet_soc_code"])
            task_id = _parse_int(row["task_id"])
            value = float(row["importance"])
        except ValueError as exc:
            report.reject(line, str(exc), row)
            continue
        if not 1.0 <= value <= 5.0:
            report.reject(line, f"importance {value} outside range [1,5]", row)
            continue
        key = (soc, task_id)
        if key in out:
            if out[key] == value:
                report.n_duplicates += 1
            else:
                report.reject(line, f"conflicting importance for {key}", row)
            continue
        out[key] = value
        report.n_loaded += 1
    return out, report


def load_task_corpus(
    path: str | Path,
    importance_path: str | Path | None = None,
    delimiter: str | None = None,
) -> tuple[list[TaskRecord], CorpusReport]:
    """Load and deduplicate occupation-task pairs, joining importance ratings.

    The task file needs ``onet_soc_code, title, task_id, task``; an
    ``importance`` column in the task file itself is used when no separate
    importance file is given.  Rows repeating a ``(soc_code, task_id)`` key
    with the same text are counted as duplicates; a repeated key with
    different text is rejected.
    """
    report = LoadReport(source=str(path))
    header = read_header(path, delimiter)
    _require(path, header, ("onet_soc_code", "title", "task_id", "task"))
    inline_importance = importance_path is None and "importance" in header

    seen: dict[tuple[str, int], TaskRecord] = {}
    for line, row in iter_rows(path, delimiter):
        report.n_rows += 1
        if "__malformed__" in row:
            report.reject(line, "wrong number of fields", row)
            continue
        try:
            soc = _check_soc(row["onet_soc_code"])
            task_id = _parse_int(row["task_id"])
        except ValueError as exc:
            report.reject(line, str(exc), row)
            continue
        text = row["task"]
        if not text:
            report.reject(line, "empty task text", row)
            continue
        importance = None
        if inline_importance and row.get("importance", ""):
            try:
                importance = float(row["importance"])
            except ValueError as exc:
                report.reject(line, str(exc), row)
                continue
            if not 1.0 <= importance <= 5.0:
                report.reject(line, f"importance {importance} outside range [1,5]", row)
                continue
        key = (soc, task_id)
        prior = seen.get(key)
        if prior is not None:
            if prior.task_text == text:
                report.n_duplicates += 1
            else:
                report.reject(line, f"conflicting task text for duplicate key {key}", row)
            continue
        seen[key] = TaskRecord(soc, row["title"], task_id, text, importance)
        report.n_loaded += 1

    imp_report = None
    if importance_path is not None:
        ratings, imp_report = load_importance(importance_path, delimiter)
        seen = {k: _with_importance(rec, ratings.get(k)) for k, rec in seen.items()}

    records = list(seen.values())
    missing = sum(r.importance is None for r in records)
    if report.n_duplicates:
        logger.info("%s: collapsed %d duplicate rows", path, report.n_duplicates)
    if missing:
        logger.warning("%d tasks have no importance rating; weight 1.0 is used", missing)
    return records, CorpusReport(report, imp_report, missing)


def _with_importance(rec: TaskRecord, value: float | None) -> TaskRecord:
    return TaskRecord(rec.soc_code, rec.occupation_title, rec.task_id, rec.task_text, value)


# --------------------------------------------------------------------------
# beta exposure labels


def load_beta(path: str | Path, delimiter: str | None = None) -> tuple[list[BetaRecord], LoadReport]:
    report = LoadReport(source=str(path))
    header = read_header(path, delimiter)
    if not header:
        logger.warning("%s is empty; no beta records loaded", path)
        return [], report
    _require(path, header, ("onet_soc_code", "task_id", "beta"))
    out: dict[tuple[str, int], BetaRecord] = {}
    for line, row in iter_rows(path, delimiter):
        report.n_rows += 1
        if "__malformed__" in row:
            report.reject(line, "wrong number of fields", row)
            continue
        try:
            soc = _check_soc(row["onet_soc_code"])
            task_id = _parse_int(row["task_id"])
            value = float(row["beta"])
        except ValueError as exc:
            report.reject(line, str(exc), row)
            continue
        beta = next((b for b in BETA_VALUES if math.isclose(value, b, abs_tol=1e-9)), None)
        if beta is None:
            report.reject(line, f"beta {value} not in {{0, 0.5, 1}}", row)
            continue
        rec = BetaRecord(soc, task_id, beta)
        prior = out.get(rec.key)
        if prior is not None:
            if prior.beta == beta:
                report.n_duplicates += 1
            else:
                report.reject(line, f"conflicting beta for {rec.key}", row)
            continue
        out[rec.key] = rec
        report.n_loaded += 1
    if not out:
        logger.warning("%s contains no beta records", path)
    return list(out.values()), report


# --------------------------------------------------------------------------
# occupation profiles


def load_profiles(path: str | Path, delimiter: str | None = None) -> tuple[list[OccupationProfile], LoadReport]:
    """Occupation-level salary/seniority/employment aggregates.

    ``mean_salary`` is logged on read.  Rows with a missing or non-positive
    salary, or seniority outside [1, 7], are rejected so the regression
    sample's exclusions are visible in the rejects report.
    """
    report = LoadReport(source=str(path))
    header = read_header(path, delimiter)
    _require(path, header, ("onet_soc_code", "mean_salary", "mean_seniority", "employment"))
    out: dict[str, OccupationProfile] = {}
    for line, row in iter_rows(path, delimiter):
        report.n_rows += 1
        if "__malformed__" in row:
            report.reject(line, "wrong number of fields", row)
            continue
        try:
            soc = _check_soc(row["onet_soc_code"])
            salary = float(row["mean_salary"])
            seniority = float(row["mean_seniority"])
            employment = _parse_int(row["employment"]) if row["employment"] else 0
        except ValueError as exc:
            report.reject(line, str(exc), row)
            continue
        if not salary > 0 or math.isnan(salary):
            report.reject(line, f"mean_salary {salary} must be positive", row)
            continue
        if not 1.0 <= seniority <= 7.0:
            report.reject(line, f"mean_seniority {seniority} outside range [1,7]", row)
            continue
        if employment < 0:
            report.reject(line, f"employment {employment} is negative", row)
            continue
        if soc in out:
            report.n_duplicates += 1
            continue
        naics = row.get("naics2") or None
        out[soc] = OccupationProfile(soc, math.log(salary), seniority, employment, naics)
        report.n_loaded += 1
    return list(out.values()), report


# --------------------------------------------------------------------------
# job-openings panel


def load_panel(
    path: str | Path,
    window: tuple[str, str] | None = None,
    delimiter: str | None = None,
) -> tuple[list[PanelObservation], LoadReport]:
    """Monthly occupation job openings restricted to ``window`` (inclusive).

    Zero or missing openings are valid rows but cannot be logged; they are
    skipped and listed under ``report.notes["nonpositive"]`` so that
    :func:`balance_panel` drops the occupation.
    """
    report = LoadReport(source=str(path))
    header = read_header(path, delimiter)
    _require(path, header, ("onet_soc_code", "period", "job_openings"))
    lo, hi = (parse_period(window[0]), parse_period(window[1])) if window else (None, None)
    outside = 0
    nonpositive: list[tuple[str, str]] = []
    seen: dict[tuple[str, str], PanelObservation] = {}
    for line, row in iter_rows(path, delimiter):
        report.n_rows += 1
        if "__malformed__" in row:
            report.reject(line, "wrong number of fields", row)
            continue
        try:
            soc = _check_soc(row["onet_soc_code"])
            period = parse_period(row["period"])
        except ValueError as exc:
            report.reject(line, str(exc), row)
            continue
        if lo is not None and not lo <= period <= hi:
            outside += 1
            report.n_skipped += 1
            continue
        raw = row["job_openings"]
        if raw == "" or raw.lower() in {"na", "nan"}:
            nonpositive.append((soc, period))
            report.n_skipped += 1
            continue
        try:
            openings = _parse_int(raw)
        except ValueError as exc:
            report.reject(line, str(exc), row)
            continue
        if openings < 0:
            report.reject(line, f"negative job_openings {openings}", row)
            continue
        if openings == 0:
            nonpositive.append((soc, period))
            report.n_skipped += 1
            continue
        key = (soc, period)
        if key in seen:
            report.reject(line, f"duplicate occupation-period {key}", row)
            continue
        seen[key] = PanelObservation(soc, period, openings)
        report.n_loaded += 1
    report.notes["outside_window"] = outside
    report.notes["nonpositive"] = [list(k) for k in nonpositive]
    return list(seen.values()), report


def balance_panel(
    observations: Iterable[PanelObservation],
    periods: list[str],
) -> tuple[list[PanelObservation], list[str]]:
    """Keep occupations observed (with positive openings) in every period.

    Returns the kept observations, sorted by ``(soc_code, period)``, and the
    sorted list of dropped occupation codes.
    """
    wanted = set(periods)
    by_soc: dict[str, list[PanelObservation]] = {}
    for obs in observations:
        if obs.period in wanted:
            by_soc.setdefault(obs.soc_code, []).append(obs)
    kept, dropped = [], []
    for soc in sorted(by_soc):
        rows = by_soc[soc]
        if {o.period for o in rows} == wanted and all(o.job_openings > 0 for o in rows):
            kept.extend(sorted(rows, key=lambda o: o.period))
        else:
            dropped.append(soc)
    return kept, dropped


def write_rejects(path: str | Path, rejects: Iterable[Reject]) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for rej in rejects:
            fh.write(rej.to_json() + "\n")
            n += 1
    return n
