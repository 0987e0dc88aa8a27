"""Batch annotation against a chat-completions gateway, or an offline stub.

Requests run concurrently under a semaphore of ``max_in_flight``.  A failed
attempt is retried up to ``max_retries`` times, sleeping ``2**attempt``
seconds, or the server's ``Retry-After`` on a 429.  Validated results are
appended to a JSONL checkpoint as they arrive; tasks already in the
checkpoint are never requested again.
"""

from __future__ import annotations

import asyncio
import email.utils
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import AsyncIterator, Awaitable, Callable, Iterable, Literal, Sequence

import httpx
import numpy as np

from .ingest import TaskRecord
from .rubric import (
    DIMENSIONS,
    TASK_TYPES,
    AnnotationError,
    AnnotationResult,
    AuditFlag,
    PromptTemplate,
    TaskReasoning,
    annotation_from_record,
    parse_annotation,
    render_prompt,
)

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 429}
Status = Literal["ok", "retried_ok", "failed"]


@dataclass
class AnnotatorConfig:
    model_name: str = "google/gemini-2.5-flash"
    temperature: float = 0.0
    max_output_tokens: int = 4000
    reasoning_effort: str = "medium"
    max_in_flight: int = 50
    max_retries: int = 3
    request_timeout: float = 120.0
    base_url: str = "https://openrouter.ai/api/v1"
    api_key_env: str = "OPENROUTER_API_KEY"
    json_mode: bool = True
    jitter: float = 0.0  # multiplicative, off by default

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not self.request_timeout > 0:
            raise ValueError("request_timeout must be positive")
        if self.reasoning_effort not in ("low", "medium", "high"):
            raise ValueError(f"reasoning_effort {self.reasoning_effort!r} not in low/medium/high")

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env)

    def request_body(self, prompt: str) -> dict:
        body = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
            "reasoning": {"effort": self.reasoning_effort},
        }
        if self.json_mode:
            body["response_format"] = {"type": "json_object"}
        return body


@dataclass
class RequestOutcome:
    soc_code: str
    task_id: int
    status: Status
    attempts: int
    latencies: list[float] = field(default_factory=list)
    raw: str | None = None
    result: AnnotationResult | None = None
    flags: list[AuditFlag] = field(default_factory=list)
    error: str | None = None
    usage: dict | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.soc_code, self.task_id)

    def failure_record(self) -> dict:
        return {"soc_code": self.soc_code, "task_id": self.task_id, "status": self.status,
                "attempts": self.attempts, "error": self.error, "raw": self.raw}


@dataclass
class BatchReport:
    ok: int = 0
    retried_ok: int = 0
    failed: int = 0
    skipped: int = 0
    flags: int = 0

    def add(self, outcome: RequestOutcome) -> None:
        if outcome.status == "ok":
            self.ok += 1
        elif outcome.status == "retried_ok":
            self.retried_ok += 1
        else:
            self.failed += 1
        self.flags += len(outcome.flags)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# --------------------------------------------------------------------------
# checkpoint


class CheckpointStore:
    """Append-only JSONL of validated annotations, one line per task.

    A torn final line (from an interrupted write) is truncated on open.
    Writes are serialized with a lock.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._keys: set[tuple[str, int]] = set()
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()
            return
        data = self.path.read_bytes()
        good = 0
        pos = 0
        while pos < len(data):
            end = data.find(b"\n", pos)
            if end < 0:
                break
            line = data[pos:end]
            try:
                rec = json.loads(line)
                self._keys.add((rec["soc_code"], int(rec["task_id"])))
            except (json.JSONDecodeError, KeyError):
                break
            pos = good = end + 1
        if good < len(data):
            logger.warning("%s: truncating %d bytes of incomplete record", self.path, len(data) - good)
            with self.path.open("r+b") as fh:
                fh.truncate(good)

    def __contains__(self, key: tuple[str, int]) -> bool:
        return key in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def append(self, record: dict) -> bool:
        key = (record["soc_code"], int(record["task_id"]))
        with self._lock:
            if key in self._keys:
                return False
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
                fh.flush()
            self._keys.add(key)
            return True

    def records(self) -> list[dict]:
        with self.path.open("r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# stub backend

PHYSICAL_TERMS = (
    "lift", "carry", "clean", "wash", "install", "repair", "assemble", "weld", "drive", "load",
    "unload", "dig", "cut", "paint", "operate", "lay", "mix", "pour", "climb", "harvest",
    "sweep", "scrub", "hammer", "drill", "cook", "stack", "move", "handle", "patient",
)


def _digest(*parts) -> int:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


def stub_annotate(task: TaskRecord, seed: int = 0) -> AnnotationResult:
    """Deterministic schema-valid annotation for offline runs and tests.

    The gate fails for most tasks whose text mentions physical work and for
    a small hash-chosen share of the rest.  Scores share a latent level so
    the dimensions correlate positively.
    """
    h = _digest(task.soc_code, task.task_id, seed)
    rng = np.random.default_rng(h)
    text = task.task_text.lower()
    physical = any(term in text for term in PHYSICAL_TERMS)
    gate_pass = (h % 10 >= 8) if physical else (h % 10 != 0)
    ttype = TASK_TYPES[h % len(TASK_TYPES)]
    if not gate_pass:
        return AnnotationResult(
            task.soc_code, task.task_id, False,
            "The task requires hands-on physical work that cannot be carried out digitally.",
            None, {}, {}, task.occupation_title, task.task_text,
        )
    level = rng.normal(5.0, 1.5)
    scores = {d: int(np.clip(round(level + rng.normal(0.0, 1.3)), 1, 10)) for d in DIMENSIONS}
    low = min(scores.values())
    minima = [d for d in DIMENSIONS if scores[d] == low]
    binding = minima[0] if rng.random() < 0.85 else DIMENSIONS[int(rng.integers(8))]
    reasoning = TaskReasoning(
        task_type=ttype,
        core_output="A digital work product for the stated task.",
        verification_bottleneck="Agreement with a domain reviewer.",
        tool_requirements="Standard office and data software.",
        predicted_binding_constraint=binding,
    )
    justs = {d: f"Stub justification for {d} at level {scores[d]}." for d in DIMENSIONS}
    return AnnotationResult(
        task.soc_code, task.task_id, True,
        "The task can be carried out primarily through digital means.",
        reasoning, scores, justs, task.occupation_title, task.task_text,
    )


# --------------------------------------------------------------------------
# HTTP backend


class _Retryable(Exception):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class _Fatal(Exception):
    pass


def parse_retry_after(value: str | None) -> float | None:
    """Seconds to wait from a ``Retry-After`` header (delta-seconds or HTTP date)."""
    if not value:
        return None
    value = value.strip()
    try:
        return max(0.0, float(value))
    except ValueError:
        pass
    try:
        when = email.utils.parsedate_to_datetime(value)
    except (TypeError, ValueError):
        return None
    return max(0.0, when.timestamp() - time.time())


def backoff_delay(attempt: int, retry_after: float | None, jitter: float = 0.0,
                  rng: random.Random | None = None) -> float:
    """Delay after failed attempt ``attempt`` (1-based): Retry-After if given, else 2**attempt."""
    if retry_after is not None:
        return retry_after
    delay = float(2 ** attempt)
    if jitter:
        delay *= 1.0 + (rng or random).uniform(0.0, jitter)
    return delay


def _content(payload: dict) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise _Retryable("response lacks choices[0].message.content") from None
    if isinstance(content, list):  # some gateways return content parts
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    if not isinstance(content, str) or not content.strip():
        raise _Retryable("empty message content")
    return content


async def _attempt(client: httpx.AsyncClient, url: str, body: dict, headers: dict, timeout: float) -> tuple[str, dict | None]:
    try:
        resp = await asyncio.wait_for(client.post(url, json=body, headers=headers), timeout)
    except asyncio.TimeoutError:
        raise _Retryable(f"timed out after {timeout:g}s") from None
    except httpx.TimeoutException as exc:
        raise _Retryable(f"timed out: {exc!r}") from None
    except httpx.TransportError as exc:
        raise _Retryable(f"transport error: {exc!r}") from None
    code = resp.status_code
    if code == 429:
        raise _Retryable("HTTP 429", parse_retry_after(resp.headers.get("retry-after")))
    if code in RETRYABLE_STATUS or code >= 500:
        raise _Retryable(f"HTTP {code}")
    if code >= 400:
        raise _Fatal(f"HTTP {code}: {resp.text[:500]}")
    try:
        payload = resp.json()
    except ValueError:
        raise _Retryable("response body is not JSON") from None
    return _content(payload), payload.get("usage")


async def annotate_one(
    client: httpx.AsyncClient,
    task: TaskRecord,
    template: PromptTemplate,
    config: AnnotatorConfig,
    sleep: Callable[[float], Awaitable[None]] = asyncio.sleep,
) -> RequestOutcome:
    url = config.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    body = config.request_body(render_prompt(template, task))
    latencies: list[float] = []
    last_error = ""
    last_raw = None
    for attempt in range(1, config.max_retries + 2):
        start = time.monotonic()
        try:
            raw, usage = await _attempt(client, url, body, headers, config.request_timeout)
            last_raw = raw
            result, flags = parse_annotation(raw, task)
        except _Fatal as exc:
            latencies.append(time.monotonic() - start)
            return RequestOutcome(task.soc_code, task.task_id, "failed", attempt, latencies, error=str(exc))
        except (_Retryable, AnnotationError) as exc:
            latencies.append(time.monotonic() - start)
            last_error = str(exc)
            if attempt > config.max_retries:
                break
            delay = backoff_delay(attempt, getattr(exc, "retry_after", None), config.jitter)
            logger.debug("%s/%s attempt %d failed (%s); sleeping %.2fs",
                         task.soc_code, task.task_id, attempt, exc, delay)
            await sleep(delay)
            continue
        latencies.append(time.monotonic() - start)
        status: Status = "ok" if attempt == 1 else "retried_ok"
        return RequestOutcome(task.soc_code, task.task_id, status, attempt, latencies,
                              raw=raw, result=result, flags=flags, usage=usage)
    return RequestOutcome(task.soc_code, task.task_id, "failed", config.max_retries + 1, latencies,
                          raw=last_raw, error=last_error)


def _record(result: AnnotationResult, flags: Sequence[AuditFlag]) -> dict:
    # audit flags travel with the checkpoint so a resumed run can rebuild them
    return {**result.to_record(), "flags": [f.to_dict() for f in flags]}


async def stream_annotations(
    tasks: Sequence[TaskRecord],
    template: PromptTemplate,
    config: AnnotatorConfig,
    checkpoint: CheckpointStore,
    backend: str = "http",
    seed: int = 0,
    client: httpx.AsyncClient | None = None,
) -> AsyncIterator[RequestOutcome]:
    """Yield one terminal outcome per pending task, in completion order.

    Successful results are appended to ``checkpoint`` before they are
    yielded.  Closing the generator early cancels outstanding requests;
    a later call resumes with the tasks not yet checkpointed.
    """
    pending = [t for t in tasks if t.key not in checkpoint]
    if backend == "stub":
        for t in pending:
            result = stub_annotate(t, seed)
            # round-trip through the validator so stub output obeys the same schema
            raw = json.dumps(result.to_response(), sort_keys=True)
            result, flags = parse_annotation(raw, t)
            checkpoint.append(_record(result, flags))
            yield RequestOutcome(t.soc_code, t.task_id, "ok", 1, [], raw=raw, result=result, flags=flags)
        return
    if backend != "http":
        raise ValueError(f"unknown backend {backend!r}")

    own_client = client is None
    if own_client:
        limits = httpx.Limits(max_connections=config.max_in_flight,
                              max_keepalive_connections=config.max_in_flight)
        client = httpx.AsyncClient(limits=limits, timeout=httpx.Timeout(config.request_timeout))
    gate = asyncio.Semaphore(config.max_in_flight)

    async def run(t: TaskRecord) -> RequestOutcome:
        async def guarded_sleep(delay: float) -> None:
            # release the slot while backing off so other tasks can proceed
            gate.release()
            try:
                await asyncio.sleep(delay)
            finally:
                await gate.acquire()

        async with gate:
            outcome = await annotate_one(client, t, template, config, sleep=guarded_sleep)
        if outcome.result is not None:
            checkpoint.append(_record(outcome.result, outcome.flags))
        return outcome

    jobs = [asyncio.ensure_future(run(t)) for t in pending]
    try:
        for fut in asyncio.as_completed(jobs):
            yield await fut
    finally:
        for j in jobs:
            j.cancel()
        await asyncio.gather(*jobs, return_exceptions=True)
        if own_client:
            await client.aclose()


def annotate_batch(
    tasks: Sequence[TaskRecord],
    template: PromptTemplate,
    config: AnnotatorConfig,
    checkpoint: CheckpointStore | str | Path,
    backend: str = "http",
    seed: int = 0,
    failures_path: str | Path | None = None,
    flags_path: str | Path | None = None,
) -> BatchReport:
    """Run :func:`stream_annotations` to completion and return the counts.

    Failure records and audit flags are appended to their JSONL files when
    paths are given.
    """
    if not isinstance(checkpoint, CheckpointStore):
        checkpoint = CheckpointStore(checkpoint)
    tasks = list(tasks)
    report = BatchReport(skipped=sum(t.key in checkpoint for t in tasks))

    async def consume() -> None:
        fail_fh = open(failures_path, "a", encoding="utf-8") if failures_path else None
        flag_fh = open(flags_path, "a", encoding="utf-8") if flags_path else None
        try:
            async for outcome in stream_annotations(tasks, template, config, checkpoint, backend, seed):
                report.add(outcome)
                if outcome.status == "failed":
                    logger.warning("%s/%s failed: %s", outcome.soc_code, outcome.task_id, outcome.error)
                    if fail_fh:
                        fail_fh.write(json.dumps(outcome.failure_record(), ensure_ascii=False) + "\n")
                    if flag_fh and outcome.error and outcome.error.startswith("out_of_range"):
                        flag = AuditFlag(outcome.soc_code, outcome.task_id, "out_of_range", outcome.error)
                        flag_fh.write(json.dumps(flag.to_dict()) + "\n")
                if flag_fh:
                    for f in outcome.flags:
                        flag_fh.write(json.dumps(f.to_dict(), ensure_ascii=False) + "\n")
        finally:
            for fh in (fail_fh, flag_fh):
                if fh:
                    fh.close()

    asyncio.run(consume())
    logger.info("annotation finished: %s", report.as_dict())
    return report


def load_annotations(path: str | Path, tasks: Iterable[TaskRecord] | None = None) -> list[AnnotationResult]:
    """Validated results from a checkpoint file."""
    lookup = {t.key: t for t in tasks} if tasks is not None else {}
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(annotation_from_record(rec, lookup.get((rec["soc_code"], int(rec["task_id"])))))
    return out
