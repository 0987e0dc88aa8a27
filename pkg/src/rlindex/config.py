"""Run configuration: a flat ``key = value`` text file.

Example::

    # relative paths (inputs and out) resolve against this file's directory
    tasks = data/task_statements.csv
    importance = data/importance.csv
    beta = data/beta.csv
    profiles = data/profiles.csv
    panel = data/panel.csv
    template =                  # empty: bundled v4.2 rubric
    delimiter =                 # empty: auto-detect comma/tab

    out = out
    seed = 0

    # annotator
    backend = stub              # stub | http
    model_name = google/gemini-2.5-flash
    temperature = 0
    max_output_tokens = 4000
    reasoning_effort = medium
    max_in_flight = 50
    max_retries = 3
    request_timeout = 120
    base_url = https://openrouter.ai/api/v1
    api_key_env = OPENROUTER_API_KEY

    # analysis
    panel_start = 2021-09
    panel_end = 2025-11
    did_cutoff = 2022-11
    event_reference = 2022-10
    top_k = 10
    exemplar_k = 5
    n_sims = 1000
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .annotator import AnnotatorConfig

PATH_KEYS = ("tasks", "importance", "beta", "profiles", "panel", "template", "out")


@dataclass
class RunConfig:
    tasks: str | None = None
    importance: str | None = None
    beta: str | None = None
    profiles: str | None = None
    panel: str | None = None
    template: str | None = None
    delimiter: str | None = None
    out: str = "out"
    seed: int = 0
    backend: str = "stub"
    annotator: AnnotatorConfig = field(default_factory=AnnotatorConfig)
    panel_start: str = "2021-09"
    panel_end: str = "2025-11"
    did_cutoff: str = "2022-11"
    event_reference: str = "2022-10"
    top_k: int = 10
    exemplar_k: int = 5
    n_sims: int = 1000

    def config_hash(self) -> str:
        """Hash of everything that can change an artifact (the output directory excluded)."""
        d = asdict(self)
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def as_dict(self) -> dict:
        return asdict(self)


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in {"1", "true", "yes", "on"}
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def parse_config(text: str, base_dir: str | Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    parser.read_string("[run]\n" + text)
    values = dict(parser["run"])

    cfg = RunConfig()
    ann = AnnotatorConfig()
    ann_keys = {f.name for f in fields(AnnotatorConfig)}
    run_keys = {f.name for f in fields(RunConfig)} - {"annotator"}
    ann_kwargs = {}
    for key, raw in values.items():
        raw = raw.strip()
        if key in ann_keys:
            if raw:
                ann_kwargs[key] = _coerce(raw, getattr(ann, key))
        elif key in run_keys:
            default = getattr(cfg, key)
            if key == "delimiter" and raw.lower() in {"tab", "\\t"}:
                raw = "\t"
            if raw == "":
                value = None if default is None else default
            else:
                value = raw if default is None else _coerce(raw, default)
            if key in PATH_KEYS and value and base_dir is not None:
                value = str((Path(base_dir) / value).resolve())
            setattr(cfg, key, value)
        else:
            raise KeyError(f"unknown config key {key!r}")
    cfg.annotator = AnnotatorConfig(**ann_kwargs)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)
