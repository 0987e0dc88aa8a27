"""Scoring prompt rendering and validation of annotator responses.

A response is a JSON object with the three rubric stages::

    {
      "occupation": "...", "task": "...",
      "physical_feasibility": {"justification": "...", "pass": true},
      "task_reasoning": {"task_type": "analytical", "core_output": "...",
                         "verification_bottleneck": "...",
                         "tool_requirements": "...", "binding_constraint": "D4"},
      "dimensions": {"D1": {"justification": "...", "score": 7}, ...}
    }

Dimension keys may be ``D1``..``D8`` or the dimension names; they are stored
as ``D1``..``D8``.  A gate-failing response carries ``null`` dimensions (or
omits them) and may omit the reasoning block.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Literal

from .ingest import TaskRecord

DIMENSIONS = ("D1", "D2", "D3", "D4", "D5", "D6", "D7", "D8")
DIMENSION_NAMES = {
    "D1": "Verification Method Spectrum",
    "D2": "Environment Simulability",
    "D3": "State Observability & Context",
    "D4": "Task Variability & Knowledge Breadth",
    "D5": "Sequential Decision Depth",
    "D6": "Feedback Density & Decomposability",
    "D7": "Tool & Interface Accessibility",
    "D8": "Output Tangibility & Gradeability",
}
TASK_TYPES = ("generative", "analytical", "interactive", "procedural", "hybrid")
PLACEHOLDERS = ("{{OCCUPATION}}", "{{TASK}}")
_PLACEHOLDER_RE = re.compile(r"\{\{(OCCUPATION|TASK)\}\}")

FlagKind = Literal["binding_mismatch", "schema_repair", "out_of_range"]


def _squash(text: str) -> str:
    return re.sub(r"[^a-z0-9]", "", text.lower())


# Short forms an annotator tends to use, e.g. "verification_method" or "tool_access".
_NAME_INDEX: dict[str, str] = {}
for _dim, _name in DIMENSION_NAMES.items():
    _words = re.findall(r"[a-z]+", _name.lower())
    _NAME_INDEX[_squash(_name)] = _dim
    _NAME_INDEX["".join(_words[:2])] = _dim
    _NAME_INDEX["".join(w for w in _words if w != "and")] = _dim
_NAME_INDEX[_squash("tool access")] = "D7"
_NAME_INDEX[_squash("tool accessibility")] = "D7"
_NAME_INDEX[_squash("feedback density")] = "D6"
_NAME_INDEX[_squash("output tangibility")] = "D8"
_NAME_INDEX[_squash("task variability")] = "D4"
_NAME_INDEX[_squash("state observability")] = "D3"


def canonical_dimension(label: object) -> str | None:
    """Map ``"D4"``, ``"d4: Task Variability"`` or ``"task_variability"`` to ``"D4"``."""
    if not isinstance(label, str):
        return None
    text = label.strip()
    m = re.match(r"^[dD]\s*([1-8])(?![0-9])", text)
    if m:
        return f"D{m.group(1)}"
    key = _squash(text)
    if key in _NAME_INDEX:
        return _NAME_INDEX[key]
    for name, dim in _NAME_INDEX.items():
        if key and (key.startswith(name) or name.startswith(key)) and len(key) >= 6:
            return dim
    return None


# --------------------------------------------------------------------------
# prompt


@dataclass(frozen=True)
class PromptTemplate:
    template_text: str
    version: str = "4.2"

    def __post_init__(self):
        for ph in PLACEHOLDERS:
            count = self.template_text.count(ph)
            if count != 1:
                raise ValueError(f"template must contain {ph} exactly once (found {count})")

    @classmethod
    def from_file(cls, path: str | Path, version: str = "4.2") -> "PromptTemplate":
        return cls(Path(path).read_text(encoding="utf-8"), version)

    @classmethod
    def default(cls) -> "PromptTemplate":
        text = resources.files("rlindex").joinpath("prompts/rubric_v4_2.txt").read_text(encoding="utf-8")
        return cls(text, "4.2")


def render_prompt(template: PromptTemplate, task: TaskRecord) -> str:
    """Substitute occupation title and task text in a single pass.

    Substituted text is never rescanned, so a task statement that itself
    contains ``{{OCCUPATION}}`` comes through literally.
    """
    values = {"OCCUPATION": task.occupation_title, "TASK": task.task_text}
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template.template_text)


# --------------------------------------------------------------------------
# annotation schema


class AnnotationError(ValueError):
    """A response that cannot be turned into a valid annotation.

    ``kind`` is one of ``unparseable``, ``schema``, ``incomplete`` or
    ``out_of_range``; ``raw`` keeps the response text for retry/inspection.
    """

    def __init__(self, kind: str, message: str, raw: str = ""):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.raw = raw


@dataclass(frozen=True)
class TaskReasoning:
    task_type: str
    core_output: str
    verification_bottleneck: str
    tool_requirements: str
    predicted_binding_constraint: str | None


@dataclass(frozen=True)
class AuditFlag:
    soc_code: str
    task_id: int
    kind: FlagKind
    detail: str

    def to_dict(self) -> dict:
        return {"soc_code": self.soc_code, "task_id": self.task_id, "kind": self.kind, "detail": self.detail}


@dataclass(frozen=True)
class AnnotationResult:
    soc_code: str
    task_id: int
    gate_pass: bool
    gate_justification: str
    task_reasoning: TaskReasoning | None = None
    dimension_scores: dict[str, int] = field(default_factory=dict)
    dimension_justifications: dict[str, str] = field(default_factory=dict)
    occupation: str = ""
    task: str = ""

    @property
    def key(self) -> tuple[str, int]:
        return (self.soc_code, self.task_id)

    def scores_vector(self) -> list[int] | None:
        if not self.gate_pass:
            return None
        return [self.dimension_scores[d] for d in DIMENSIONS]

    def to_response(self) -> dict:
        """The wire-format response object this result parses from."""
        reasoning = None
        if self.task_reasoning is not None:
            r = self.task_reasoning
            reasoning = {
                "task_type": r.task_type,
                "core_output": r.core_output,
                "verification_bottleneck": r.verification_bottleneck,
                "tool_requirements": r.tool_requirements,
                "binding_constraint": r.predicted_binding_constraint,
            }
        if self.gate_pass:
            dims = {
                d: {"justification": self.dimension_justifications[d], "score": self.dimension_scores[d]}
                for d in DIMENSIONS
            }
        else:
            dims = {d: None for d in DIMENSIONS}
        return {
            "occupation": self.occupation,
            "task": self.task,
            "physical_feasibility": {"justification": self.gate_justification, "pass": self.gate_pass},
            "task_reasoning": reasoning,
            "dimensions": dims,
        }

    def to_record(self) -> dict:
        """Checkpoint/JSONL record: identifiers plus the response object."""
        return {"soc_code": self.soc_code, "task_id": self.task_id, "response": self.to_response()}


def extract_json_object(raw: str) -> dict:
    """Parse the outermost JSON object, tolerating code fences and prose."""
    text = raw.strip()
    fence = re.match(r"^```[a-zA-Z0-9_-]*\s*\n(.*?)\n?```\s*$", text, re.S)
    if fence:
        text = fence.group(1).strip()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        start = text.find("{")
        if start < 0:
            raise AnnotationError("unparseable", "no JSON object found", raw) from None
        try:
            obj, _ = json.JSONDecoder().raw_decode(text[start:])
        except json.JSONDecodeError as exc:
            raise AnnotationError("unparseable", str(exc), raw) from None
    if not isinstance(obj, dict):
        raise AnnotationError("unparseable", "top-level JSON value is not an object", raw)
    return obj


def _lookup(obj: dict, *names: str):
    squashed = {_squash(k): v for k, v in obj.items()}
    for n in names:
        if _squash(n) in squashed:
            return squashed[_squash(n)]
    return None


def _as_bool(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in {"pass", "passed", "true", "yes"}:
        return True
    if isinstance(value, str) and value.strip().lower() in {"fail", "failed", "false", "no"}:
        return False
    return None


def _coerce_score(dim: str, value, raw: str) -> tuple[int, bool]:
    """Return ``(score, repaired)``; integral floats and numeric strings are repaired."""
    if isinstance(value, bool):
        raise AnnotationError("schema", f"{dim} score is a boolean", raw)
    repaired = False
    if isinstance(value, str):
        try:
            value = float(value.strip())
        except ValueError:
            raise AnnotationError("schema", f"{dim} score {value!r} is not numeric", raw) from None
        repaired = True
    if isinstance(value, float):
        if not value.is_integer():
            raise AnnotationError("out_of_range", f"{dim} score {value} is not an integer", raw)
        value = int(value)
        repaired = True
    if not isinstance(value, int):
        raise AnnotationError("schema", f"{dim} score has type {type(value).__name__}", raw)
    if not 1 <= value <= 10:
        raise AnnotationError("out_of_range", f"{dim} score {value} outside [1,10]", raw)
    return value, repaired


def parse_annotation(raw_json: str, task: TaskRecord) -> tuple[AnnotationResult, list[AuditFlag]]:
    """Validate a full response body against the rubric schema.

    Raises :class:`AnnotationError` for unparseable JSON, a missing or
    out-of-range score on a gate-passing task, or missing justifications.
    """
    obj = extract_json_object(raw_json)
    flags: list[AuditFlag] = []

    def repair(detail: str) -> None:
        flags.append(AuditFlag(task.soc_code, task.task_id, "schema_repair", detail))

    gate = _lookup(obj, "physical_feasibility", "physical_feasibility_gate", "gate")
    if not isinstance(gate, dict):
        raise AnnotationError("schema", "missing physical_feasibility object", raw_json)
    gate_pass = _as_bool(_lookup(gate, "pass", "passed", "gate_pass", "result", "verdict"))
    if gate_pass is None:
        raise AnnotationError("schema", "physical_feasibility.pass is not a boolean", raw_json)
    gate_just = _lookup(gate, "justification", "reasoning", "rationale")
    if not isinstance(gate_just, str) or not gate_just.strip():
        raise AnnotationError("incomplete", "missing gate justification", raw_json)

    reasoning = None
    r = _lookup(obj, "task_reasoning", "structured_task_reasoning", "reasoning")
    if isinstance(r, dict):
        ttype = _lookup(r, "task_type", "type")
        ttype = ttype.strip().lower() if isinstance(ttype, str) else ""
        if ttype not in TASK_TYPES:
            raise AnnotationError("schema", f"task_type {ttype!r} not in {TASK_TYPES}", raw_json)
        label = _lookup(r, "binding_constraint", "predicted_binding_constraint")
        binding = canonical_dimension(label)
        if label is not None and binding is None:
            repair(f"unrecognized binding constraint {label!r}")
        reasoning = TaskReasoning(
            task_type=ttype,
            core_output=str(_lookup(r, "core_output") or ""),
            verification_bottleneck=str(_lookup(r, "verification_bottleneck") or ""),
            tool_requirements=str(_lookup(r, "tool_requirements") or ""),
            predicted_binding_constraint=binding,
        )
    elif gate_pass:
        raise AnnotationError("incomplete", "gate-passing response lacks task_reasoning", raw_json)

    dims_raw = _lookup(obj, "dimensions", "dimension_scores", "scores")
    dims: dict[str, object] = {}
    if isinstance(dims_raw, dict):
        for k, v in dims_raw.items():
            d = canonical_dimension(k)
            if d is None:
                raise AnnotationError("schema", f"unknown dimension key {k!r}", raw_json)
            if d in dims:
                raise AnnotationError("schema", f"dimension {d} given twice", raw_json)
            if k != d:
                repair(f"dimension key {k!r} stored as {d}")
            dims[d] = v
    elif isinstance(dims_raw, list):
        for item in dims_raw:
            d = canonical_dimension(_lookup(item, "dimension", "id", "name")) if isinstance(item, dict) else None
            if d is None:
                raise AnnotationError("schema", f"cannot identify dimension in {item!r}", raw_json)
            dims[d] = item
    elif dims_raw is not None:
        raise AnnotationError("schema", "dimensions must be an object", raw_json)

    scores: dict[str, int] = {}
    justs: dict[str, str] = {}
    if gate_pass:
        missing = [d for d in DIMENSIONS if dims.get(d) is None]
        if missing:
            raise AnnotationError("incomplete", f"gate passed but no score for {', '.join(missing)}", raw_json)
        for d in DIMENSIONS:
            entry = dims[d]
            if isinstance(entry, dict):
                value = _lookup(entry, "score", "value")
                just = _lookup(entry, "justification", "reasoning", "rationale")
            else:
                value, just = entry, None
            if value is None:
                raise AnnotationError("incomplete", f"{d} has no score", raw_json)
            score, fixed = _coerce_score(d, value, raw_json)
            if fixed:
                repair(f"{d} score {value!r} coerced to {score}")
            if not isinstance(just, str) or not just.strip():
                raise AnnotationError("incomplete", f"{d} has no justification", raw_json)
            scores[d], justs[d] = score, just
    elif any(v is not None for v in dims.values()):
        repair("gate failed but dimension scores present; scores discarded")

    result = AnnotationResult(
        soc_code=task.soc_code,
        task_id=task.task_id,
        gate_pass=gate_pass,
        gate_justification=gate_just,
        task_reasoning=reasoning,
        dimension_scores=scores,
        dimension_justifications=justs,
        occupation=str(_lookup(obj, "occupation") or task.occupation_title),
        task=str(_lookup(obj, "task") or task.task_text),
    )
    flag = binding_audit(result)
    if flag is not None:
        flags.append(flag)
    return result, flags


def binding_audit(result: AnnotationResult) -> AuditFlag | None:
    """Flag a predicted binding constraint that is not among the lowest scores."""
    if not result.gate_pass or result.task_reasoning is None:
        return None
    predicted = result.task_reasoning.predicted_binding_constraint
    if predicted is None:
        return None
    low = min(result.dimension_scores.values())
    minima = [d for d in DIMENSIONS if result.dimension_scores[d] == low]
    if predicted in minima:
        return None
    return AuditFlag(
        result.soc_code,
        result.task_id,
        "binding_mismatch",
        f"predicted {predicted} ({result.dimension_scores[predicted]}) but minimum {low} at {','.join(minima)}",
    )


def annotation_from_record(record: dict, task: TaskRecord | None = None) -> AnnotationResult:
    """Rebuild a result from a checkpoint record written by :meth:`AnnotationResult.to_record`."""
    if task is None:
        resp = record["response"]
        task = TaskRecord(record["soc_code"], resp.get("occupation", ""), int(record["task_id"]),
                          resp.get("task", "") or "-")
    result, _ = parse_annotation(json.dumps(record["response"]), task)
    return result
