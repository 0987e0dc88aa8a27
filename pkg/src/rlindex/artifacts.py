"""Artifact writing with provenance headers.

CSV artifacts start with ``# key: value`` comment lines; JSON artifacts carry
a top-level ``_meta`` object.  Both record the config hash and seed.  Only
``created_at`` varies between reruns on identical inputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__

STAGE_FILE = "stage.json"


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def make_meta(stage: str, config_hash: str, seed: int) -> dict:
    return {
        "stage": stage,
        "config_hash": config_hash,
        "seed": seed,
        "tool_version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence], meta: dict | None = None) -> Path:
    path = Path(path)
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_csv(path: str | Path) -> tuple[dict, list[dict]]:
    """Metadata header and rows (as strings) of a CSV written by :func:`write_csv`."""
    meta: dict = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines(keepends=True)
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].strip().partition(":")
        meta[key.strip()] = value.strip()
        i += 1
    rows = list(csv.DictReader(lines[i:]))
    return meta, rows


def write_json(path: str | Path, obj: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    payload = {"_meta": meta, **obj} if meta is not None else obj
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default) + "\n",
                    encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, set):
        return sorted(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_stage(stage_dir: Path, stage: str, meta: dict, files: Iterable[Path], inputs: dict | None = None,
                extra: dict | None = None) -> Path:
    """Record a completed stage: its files' hashes and the config that made them."""
    record = {
        "stage": stage,
        "config_hash": meta["config_hash"],
        "seed": meta["seed"],
        "created_at": meta["created_at"],
        "files": {p.name: sha256_file(p) for p in sorted(files, key=lambda p: p.name)},
        "inputs": inputs or {},
    }
    if extra:
        record.update(extra)
    return write_json(stage_dir / STAGE_FILE, record)
