"""Command-line pipeline: ingest, score, index, factor, compare, econ, report.

Each stage writes into ``<out>/<stage>/`` and finishes with a ``stage.json``
recording the config hash, seed and file hashes.  Exit codes: 0 success,
2 missing upstream stage or input, 3 validation failures (rejects or failed
annotations; outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .annotator import AnnotatorConfig, CheckpointStore, annotate_batch, load_annotations
from .artifacts import (
    STAGE_FILE,
    make_meta,
    read_csv,
    read_json,
    sha256_file,
    write_csv,
    write_json,
    write_stage,
)
from .compare import compare_indices, correlations, divergence, quadrant_counts, quadrants
from .config import RunConfig, load_config
from .econ import WAGE_SPECS, did, event_study, implied_peak, occupation_frame, ols
from .factor import biplot_points, cronbach_alpha, dimension_correlations, parallel_analysis, pca, score_matrix
from .index import OccupationScore, TaskScore, aggregate_occupation, compute_task_index, summarize
from .ingest import (
    TaskRecord,
    load_beta,
    load_panel,
    load_profiles,
    load_task_corpus,
    month_range,
    write_rejects,
)
from .rubric import DIMENSIONS, PromptTemplate

logger = logging.getLogger("rlindex")

STAGES = ("ingest", "score", "index", "factor", "compare", "econ")
EXIT_MISSING = 2
EXIT_INVALID = 3


class StageError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class Run:
    """Resolved configuration plus helpers for stage directories."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.hash = cfg.config_hash()

    def dir(self, stage: str) -> Path:
        d = self.out / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def meta(self, stage: str) -> dict:
        return make_meta(stage, self.hash, self.cfg.seed)

    def require(self, stage: str, *names: str) -> Path:
        d = self.out / stage
        if not (d / STAGE_FILE).exists() or any(not (d / n).exists() for n in names):
            raise StageError(EXIT_MISSING, f"missing upstream artifact from stage '{stage}' (run `rlindex {stage}` first)")
        return d

    def require_input(self, key: str) -> Path:
        value = getattr(self.cfg, key)
        if not value:
            raise StageError(EXIT_MISSING, f"config key '{key}' is not set")
        path = Path(value)
        if not path.exists():
            raise StageError(EXIT_MISSING, f"input file for '{key}' not found: {path}")
        return path


# --------------------------------------------------------------------------
# readers for intermediate artifacts


def read_tasks(path: Path) -> list[TaskRecord]:
    records, _ = load_task_corpus(path)
    return records


def read_task_scores(path: Path) -> list[TaskScore]:
    _, rows = read_csv(path)
    out = []
    for r in rows:
        gate = r["gate_pass"] == "true"
        dims = tuple(int(r[d]) for d in DIMENSIONS) if gate else None
        out.append(TaskScore(r["soc_code"], int(r["task_id"]), gate, dims, float(r["rl_index"])))
    return out


def read_occupations(path: Path) -> list[OccupationScore]:
    _, rows = read_csv(path)
    return [
        OccupationScore(r["soc_code"], r["occupation_title"], float(r["rl_weighted"]), float(r["rl_unweighted"]),
                        int(r["n_tasks"]), float(r["gate_fail_share"]), r["soc_major"])
        for r in rows
    ]


# --------------------------------------------------------------------------
# stages


def cmd_ingest(run: Run) -> int:
    cfg = run.cfg
    tasks_path = run.require_input("tasks")
    d = run.dir("ingest")
    meta = run.meta("ingest")
    records, report = load_task_corpus(tasks_path, cfg.importance or None, cfg.delimiter)
    records.sort(key=lambda t: t.key)
    files = [write_csv(d / "tasks.csv", ["onet_soc_code", "title", "task_id", "task", "importance"],
                       ([t.soc_code, t.occupation_title, t.task_id, t.task_text, t.importance] for t in records), meta)]
    rejects = list(report.rejects)
    summary = {
        "tasks": {"rows": report.tasks.n_rows, "loaded": report.tasks.n_loaded,
                  "duplicates": report.tasks.n_duplicates, "rejects": len(report.tasks.rejects)},
        "occupations": len({t.soc_code for t in records}),
        "missing_importance": report.n_missing_importance,
    }
    if report.importance is not None:
        summary["importance"] = {"rows": report.importance.n_rows, "loaded": report.importance.n_loaded,
                                 "skipped_other_scales": report.importance.n_skipped,
                                 "rejects": len(report.importance.rejects)}
    if cfg.beta:
        beta, rep = load_beta(run.require_input("beta"), cfg.delimiter)
        rejects += rep.rejects
        beta.sort(key=lambda b: b.key)
        files.append(write_csv(d / "beta.csv", ["onet_soc_code", "task_id", "beta"],
                               ([b.soc_code, b.task_id, b.beta] for b in beta), meta))
        summary["beta"] = {"rows": rep.n_rows, "loaded": rep.n_loaded, "rejects": len(rep.rejects)}
    if cfg.profiles:
        profiles, rep = load_profiles(run.require_input("profiles"), cfg.delimiter)
        rejects += rep.rejects
        profiles.sort(key=lambda p: p.soc_code)
        files.append(write_csv(
            d / "profiles.csv", ["onet_soc_code", "mean_salary", "mean_seniority", "employment", "naics2"],
            ([p.soc_code, float(np.exp(p.mean_log_salary)), p.mean_seniority, p.employment_count, p.naics_sector]
             for p in profiles), meta))
        summary["profiles"] = {"rows": rep.n_rows, "loaded": rep.n_loaded, "rejects": len(rep.rejects)}
    if cfg.panel:
        panel, rep = load_panel(run.require_input("panel"), (cfg.panel_start, cfg.panel_end), cfg.delimiter)
        rejects += rep.rejects
        panel.sort(key=lambda o: (o.soc_code, o.period))
        files.append(write_csv(d / "panel.csv", ["onet_soc_code", "period", "job_openings"],
                               ([o.soc_code, o.period, o.job_openings] for o in panel), meta))
        summary["panel"] = {"rows": rep.n_rows, "loaded": rep.n_loaded, "rejects": len(rep.rejects),
                            "outside_window": rep.notes["outside_window"],
                            "nonpositive_openings": len(rep.notes["nonpositive"])}
    write_rejects(d / "rejects.jsonl", rejects)
    files += [d / "rejects.jsonl", write_json(d / "ingest_report.json", summary, meta)]
    inputs = {k: sha256_file(getattr(cfg, k)) for k in ("tasks", "importance", "beta", "profiles", "panel")
              if getattr(cfg, k)}
    write_stage(d, "ingest", meta, files, inputs)
    print(f"ingest: {len(records)} tasks across {summary['occupations']} occupations; "
          f"{report.tasks.n_duplicates} duplicates, {len(rejects)} rejects")
    if rejects:
        print(f"validation failures recorded in {d / 'rejects.jsonl'}", file=sys.stderr)
        return EXIT_INVALID
    return 0


def cmd_score(run: Run) -> int:
    cfg = run.cfg
    src = run.require("ingest", "tasks.csv")
    tasks = read_tasks(src / "tasks.csv")
    template = PromptTemplate.from_file(cfg.template) if cfg.template else PromptTemplate.default()
    d = run.dir("score")
    meta = run.meta("score")
    store = CheckpointStore(d / "annotations.jsonl")
    failures = d / "failures.jsonl"
    failures.write_text("", encoding="utf-8")
    report = annotate_batch(tasks, template, cfg.annotator, store, backend=cfg.backend, seed=cfg.seed,
                            failures_path=failures)

    # audit flags are rebuilt from the checkpoint so reruns give the same file
    flags = []
    for rec in sorted(store.records(), key=lambda r: (r["soc_code"], int(r["task_id"]))):
        flags.extend(rec.get("flags", []))
    for line in failures.read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        if (rec.get("error") or "").startswith("out_of_range"):
            flags.append({"soc_code": rec["soc_code"], "task_id": rec["task_id"], "kind": "out_of_range",
                          "detail": rec["error"]})
    with (d / "audit_flags.jsonl").open("w", encoding="utf-8") as fh:
        for f in flags:
            fh.write(json.dumps(f, sort_keys=True, ensure_ascii=False) + "\n")

    summary = {"backend": cfg.backend, "template_version": template.version, "n_tasks": len(tasks),
               "checkpointed": len(store), **report.as_dict(), "audit_flags": len(flags)}
    files = [d / "annotations.jsonl", d / "audit_flags.jsonl", failures,
             write_json(d / "score_report.json", {k: v for k, v in summary.items()
                                                  if k not in ("ok", "retried_ok", "skipped", "flags")}, meta)]
    write_stage(d, "score", meta, files)
    print(f"score: {len(store)}/{len(tasks)} tasks annotated "
          f"(new ok {report.ok}, retried {report.retried_ok}, failed {report.failed}, skipped {report.skipped})")
    if report.failed:
        print(f"failed annotations recorded in {failures}", file=sys.stderr)
        return EXIT_INVALID
    return 0


def cmd_index(run: Run) -> int:
    src_ingest = run.require("ingest", "tasks.csv")
    src_score = run.require("score", "annotations.jsonl")
    tasks = read_tasks(src_ingest / "tasks.csv")
    annotations = load_annotations(src_score / "annotations.jsonl", tasks)
    scores = sorted((compute_task_index(a) for a in annotations), key=lambda s: s.key)
    task_keys = {t.key for t in tasks}
    scores = [s for s in scores if s.key in task_keys]
    if not scores:
        raise StageError(EXIT_MISSING, "no annotated tasks in stage 'score'")
    occs = aggregate_occupation(scores, tasks)
    d = run.dir("index")
    meta = run.meta("index")
    files = [
        write_csv(d / "task_scores.csv", ["soc_code", "task_id", "gate_pass", *DIMENSIONS, "rl_index"],
                  ([s.soc_code, s.task_id, s.gate_pass, *(s.dimension_scores or [None] * 8), s.rl_index]
                   for s in scores), meta),
        write_csv(d / "occupation_index.csv",
                  ["soc_code", "occupation_title", "rl_weighted", "rl_unweighted", "n_tasks", "gate_fail_share",
                   "soc_major"],
                  ([o.soc_code, o.occupation_title, o.rl_weighted, o.rl_unweighted, o.n_tasks, o.gate_fail_share,
                    o.soc_major] for o in occs), meta),
    ]
    summary = summarize(scores, occs, run.cfg.top_k)
    files.append(write_csv(d / "dimension_stats.csv", ["dimension", "n", "mean", "sd", "p25", "median", "p75"],
                           ([r["dimension"], r["n"], r["mean"], r["sd"], r["p25"], r["median"], r["p75"]]
                            for r in summary["dimensions"]), meta))
    summary["n_unscored_tasks"] = len(tasks) - len(scores)
    files.append(write_json(d / "summary.json", summary, meta))
    write_stage(d, "index", meta, files)
    print(f"index: {len(scores)} task scores, {len(occs)} occupations, "
          f"task mean {summary['task']['mean']:.2f}, occupation mean {summary['occupation']['mean']:.2f}")
    return 0


def cmd_factor(run: Run) -> int:
    src = run.require("index", "task_scores.csv")
    scores = read_task_scores(src / "task_scores.csv")
    x = score_matrix(scores)
    if x.shape[0] < 3:
        raise StageError(EXIT_INVALID, f"only {x.shape[0]} gate-passing tasks; factor analysis needs at least 3")
    corr = dimension_correlations(x)
    res = pca(corr, x)
    pa = parallel_analysis(x.shape[0], len(DIMENSIONS), run.cfg.n_sims, run.cfg.seed, observed=res.eigenvalues)
    alpha = cronbach_alpha(x)
    d = run.dir("factor")
    meta = run.meta("factor")
    pts, arrows = biplot_points(res)
    gate_keys = [s for s in scores if s.gate_pass]
    files = [
        write_csv(d / "corr_matrix.csv", ["dimension", *DIMENSIONS],
                  ([DIMENSIONS[i], *corr[i].tolist()] for i in range(len(DIMENSIONS))), meta),
        write_json(d / "pca.json", {**res.to_dict(), "n_obs": int(x.shape[0]), "cronbach_alpha": alpha}, meta),
        write_json(d / "parallel.json", pa.to_dict(), meta),
        write_csv(d / "biplot_points.csv", ["kind", "label", "pc1", "pc2"],
                  [*(["task", f"{s.soc_code}:{s.task_id}", p[0], p[1]] for s, p in zip(gate_keys, pts)),
                   *(["loading", DIMENSIONS[i], a[0], a[1]] for i, a in enumerate(arrows))], meta),
    ]
    write_stage(d, "factor", meta, files)
    print(f"factor: PC1 eigenvalue {res.eigenvalues[0]:.3f} ({res.explained_pct[0]:.1f}%), "
          f"parallel analysis retains {sorted(pa.retained)}, alpha {alpha:.3f}")
    return 0


def cmd_compare(run: Run) -> int:
    src_ingest = run.require("ingest", "tasks.csv")
    src_index = run.require("index", "task_scores.csv")
    if not (src_ingest / "beta.csv").exists():
        raise StageError(EXIT_MISSING, "missing upstream artifact from stage 'ingest': beta.csv (set `beta` in config)")
    tasks = read_tasks(src_ingest / "tasks.csv")
    beta, _ = load_beta(src_ingest / "beta.csv")
    scores = read_task_scores(src_index / "task_scores.csv")
    rows, agg = compare_indices(scores, tasks, beta, "all")
    if len(rows) < 4:
        raise StageError(EXIT_INVALID, f"only {len(rows)} occupations with both indices; need at least 4")
    gp_rows, gp_agg = compare_indices(scores, tasks, beta, "gate_passing")
    corr_all = correlations(rows)
    corr_gp = correlations(gp_rows) if len(gp_rows) >= 3 else None
    d = run.dir("compare")
    meta = run.meta("compare")
    k = run.cfg.top_k
    cols = ["soc_code", "occupation_title", "rl_weighted", "beta_weighted", "rl_rank", "beta_rank", "rank_gap",
            "quadrant"]
    div = divergence(rows, k)
    files = [
        write_csv(d / "comparison.csv", cols, ([getattr(r, c) for c in cols] for r in rows), meta),
        write_json(d / "quadrant_exemplars.json",
                   {"counts": quadrant_counts(rows), "exemplars": quadrants(rows, run.cfg.exemplar_k)}, meta),
        write_json(d / "divergence_top.json",
                   {key: [r.__dict__ for r in v] for key, v in div.items()}, meta),
        write_csv(d / "scatter_points.csv", ["soc_code", "beta_weighted", "rl_weighted", "quadrant"],
                  ([r.soc_code, r.beta_weighted, r.rl_weighted, r.quadrant] for r in rows), meta),
        write_json(d / "correlations.json", {
            "all": corr_all.__dict__,
            "gate_passing": None if corr_gp is None else corr_gp.__dict__,
            "join_all": agg.diagnostics(),
            "join_gate_passing": {**gp_agg.diagnostics(), "n_rows": len(gp_rows)},
        }, meta),
    ]
    write_stage(d, "compare", meta, files)
    gp_text = "n/a" if corr_gp is None else f"{corr_gp.pearson:.3f}"
    print(f"compare: {len(rows)} occupations, Pearson {corr_all.pearson:.3f} (all), {gp_text} (gate-passing rebuild)")
    return 0


def cmd_econ(run: Run) -> int:
    cfg = run.cfg
    src_ingest = run.require("ingest", "tasks.csv")
    src_index = run.require("index", "occupation_index.csv")
    has_profiles = (src_ingest / "profiles.csv").exists()
    has_panel = (src_ingest / "panel.csv").exists()
    if not (has_profiles or has_panel):
        raise StageError(EXIT_MISSING, "missing upstream artifact from stage 'ingest': profiles.csv or panel.csv")
    occs = read_occupations(src_index / "occupation_index.csv")
    d = run.dir("econ")
    meta = run.meta("econ")
    files = []
    if has_profiles:
        profiles, _ = load_profiles(src_ingest / "profiles.csv")
        frame, dropped = occupation_frame(occs, profiles)
        table, summaries, peaks, errors = [], {}, {}, {}
        for name, spec in WAGE_SPECS.items():
            try:
                res = ols(spec, frame)
            except (ValueError, np.linalg.LinAlgError) as exc:
                errors[name] = str(exc)
                print(f"econ: model {name} not estimable: {exc}", file=sys.stderr)
                continue
            summaries[name] = res.summary()
            table += [[name, r["term"], r["coef"], r["se"], r["p"], r["stars"]] for r in res.table()]
            try:
                peaks[name] = implied_peak(res)
            except ValueError:
                peaks[name] = None
            print(f"econ: {name} N={res.n_obs}, R2={res.r2:.3f}")
        files.append(write_csv(d / "regressions.csv", ["model", "term", "coef", "se", "p", "stars"], table, meta))
        out = {"wage_seniority": summaries, "implied_peak": peaks, "errors": errors,
               "n_occupations": len(frame), "dropped_no_profile": dropped}
        files.append(write_json(d / "regressions.json", out, meta))
    if has_panel:
        panel, _ = load_panel(src_ingest / "panel.csv")
        periods = month_range(cfg.panel_start, cfg.panel_end)
        exposure = {o.soc_code: o.rl_weighted for o in occs}
        dd = did(panel, exposure, cfg.did_cutoff, periods)
        es = event_study(panel, exposure, cfg.event_reference, periods)
        files.append(write_json(d / "did.json", {"cutoff": cfg.did_cutoff, **dd.summary()}, meta))
        files.append(write_csv(d / "event_study.csv", ["period", "coef", "se", "ci_lo", "ci_hi"],
                               ([r["period"], r["coef"], r["se"], r["ci_lo"], r["ci_hi"]] for r in es.rows()), meta))
        print(f"econ: DiD delta {dd.delta:.4f} (SE {dd.se:.4f}), N={dd.regression.n_obs}")
    write_stage(d, "econ", meta, files)
    return 0


def cmd_report(run: Run, force: bool = False) -> int:
    stages = {}
    for s in STAGES:
        stages[s] = read_json(run.require(s) / STAGE_FILE)
    hashes = {s: rec["config_hash"] for s, rec in stages.items()}
    if len(set(hashes.values())) > 1 and not force:
        detail = ", ".join(f"{s}={h}" for s, h in hashes.items())
        raise StageError(EXIT_INVALID, f"stages were produced by different configs ({detail}); rerun or use --force")
    d = run.dir("report")
    meta = run.meta("report")
    report_md = d / "report.md"
    report_md.write_text(render_report(run), encoding="utf-8")
    artifacts = [
        {"stage": s, "config_hash": rec["config_hash"], "files": rec["files"]} for s, rec in stages.items()
    ]
    artifacts.append({"stage": "report", "config_hash": run.hash, "files": {"report.md": sha256_file(report_md)}})
    manifest = {
        "artifacts": artifacts,
        "inputs": stages["ingest"].get("inputs", {}),
        "config": run.cfg.as_dict(),
        "versions": {"rlindex": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "pandas": pd.__version__, "scipy": scipy.__version__},
    }
    write_json(d / "manifest.json", manifest, meta)
    print(f"report: {report_md} ({len(artifacts)} artifacts in manifest)")
    return 0


def _md_table(header: list[str], rows: list[list]) -> str:
    def cell(v):
        return f"{v:.2f}" if isinstance(v, float) else str(v)

    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(cell(v) for v in r) + " |" for r in rows]
    return "\n".join(lines)


def render_report(run: Run) -> str:
    out = run.out
    summary = read_json(out / "index" / "summary.json")
    parts = [f"# RL Feasibility Index report\n\nconfig hash `{run.hash}`, seed {run.cfg.seed}\n"]
    parts.append("## Top and bottom occupations\n")
    parts.append(_md_table(["Occupation", "RL index"],
                           [[r["occupation_title"], r["rl_weighted"]] for r in summary["top"]]))
    parts.append("")
    parts.append(_md_table(["Occupation", "RL index"],
                           [[r["occupation_title"], r["rl_weighted"]] for r in summary["bottom"]]))
    parts.append("\n## Summary statistics\n")
    stat_cols = ["n", "mean", "sd", "p10", "p25", "median", "p75", "p90"]
    parts.append(_md_table(["Level", *stat_cols],
                           [["Task", *[summary["task"][c] for c in stat_cols]],
                            ["Occupation (wtd.)", *[summary["occupation"][c] for c in stat_cols]]]))
    parts.append(f"\nShare of tasks at zero: {100 * summary['task_zero_share']:.1f}%\n")
    parts.append("## Dimension scores (gate-passing tasks)\n")
    parts.append(_md_table(["Dimension", "Mean", "SD", "P25", "Median", "P75"],
                           [[r["dimension"], r["mean"], r["sd"], r["p25"], r["median"], r["p75"]]
                            for r in summary["dimensions"]]))
    pca_d = read_json(out / "factor" / "pca.json")
    par = read_json(out / "factor" / "parallel.json")
    parts.append("\n## Principal components\n")
    parts.append(_md_table(["Component", "Eigenvalue", "Explained %", "Cumulative %", "Parallel p95"],
                           [[f"PC{i + 1}", ev, ex, cu, p] for i, (ev, ex, cu, p) in enumerate(zip(
                               pca_d["eigenvalues"], pca_d["explained_pct"], pca_d["cumulative_pct"],
                               par["simulated_p95"]))]))
    parts.append(f"\nParallel analysis retains {par['retained']}; Kaiser retains {pca_d['kaiser_retained']}; "
                 f"Cronbach's alpha {pca_d['cronbach_alpha']:.3f}\n")
    corr = read_json(out / "compare" / "correlations.json")
    parts.append("## Comparison with beta exposure\n")
    gp = corr["gate_passing"]
    parts.append(f"Pearson {corr['all']['pearson']:.3f}, Spearman {corr['all']['spearman']:.3f} "
                 f"over {corr['all']['n']} occupations; gate-passing rebuild Pearson "
                 f"{'n/a' if gp is None else format(gp['pearson'], '.3f')}\n")
    econ_dir = out / "econ"
    if (econ_dir / "regressions.json").exists():
        reg = read_json(econ_dir / "regressions.json")
        parts.append("## Wage and seniority regressions\n")
        rows = []
        for name, res in reg["wage_seniority"].items():
            for c in res["coefficients"]:
                rows.append([name, c["term"], c["coef"], c["se"], c["stars"]])
            rows.append([name, "N / R2", res["n_obs"], res["r2"], ""])
        parts.append(_md_table(["Model", "Term", "Coef", "SE", ""], rows))
        parts.append("")
    if (econ_dir / "did.json").exists():
        dd = read_json(econ_dir / "did.json")
        parts.append("## Difference-in-differences\n")
        parts.append(f"Post x exposure: {dd['delta']:.4f} (SE {dd['se']:.4f}, p {dd['p']:.3f}), "
                     f"N={dd['n_obs']}, occupations={dd['n_occupations']}, R2={dd['r2']:.3f}\n")
    return "\n".join(parts) + "\n"


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value run configuration file")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="rlindex", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, parents=[common])
        if name == "score":
            p.add_argument("--backend", choices=("stub", "http"))
            p.add_argument("--model-name")
            p.add_argument("--temperature", type=float)
            p.add_argument("--max-output-tokens", type=int)
            p.add_argument("--reasoning-effort", choices=("low", "medium", "high"))
            p.add_argument("--max-in-flight", type=int)
            p.add_argument("--max-retries", type=int)
            p.add_argument("--request-timeout", type=float)
            p.add_argument("--base-url")
            p.add_argument("--api-key-env")
    rp = sub.add_parser("report", parents=[common])
    rp.add_argument("--force", action="store_true", help="bundle stages produced by different configs")
    return parser


ANNOTATOR_FLAGS = ("model_name", "temperature", "max_output_tokens", "reasoning_effort", "max_in_flight",
                   "max_retries", "request_timeout", "base_url", "api_key_env")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "backend", None):
        cfg.backend = args.backend
    overrides = {k: getattr(args, k) for k in ANNOTATOR_FLAGS if getattr(args, k, None) is not None}
    if overrides:
        cfg.annotator = AnnotatorConfig(**{**cfg.annotator.__dict__, **overrides})
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(resolve_config(args))
        handlers = {"ingest": cmd_ingest, "score": cmd_score, "index": cmd_index, "factor": cmd_factor,
                    "compare": cmd_compare, "econ": cmd_econ}
        if args.command == "report":
            return cmd_report(run, force=args.force)
        return handlers[args.command](run)
    except StageError as exc:
        print(f"rlindex {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"rlindex {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
