"""Append-only JSONL trace of every attempt and lifecycle event.

One record per line, written with a single atomic append so concurrent runs
never interleave inside a record. Timestamps are RFC 3339 UTC at millisecond
precision.
"""

from __future__ import annotations

import enum
import json
import threading
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from .errors import DuplicateEvent, RunNotFound, StoreUnwritable

DEFAULT_TRACE_PATH = Path("traces/events.log")

_TS_FORMAT = "%Y-%m-%dT%H:%M:%S.%f"


def format_ts(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    dt = dt.astimezone(timezone.utc)
    return dt.strftime(_TS_FORMAT)[:-3] + "Z"


def parse_ts(text: str) -> datetime:
    if not text.endswith("Z"):
        raise ValueError(f"timestamp not UTC/RFC3339: {text}")
    return datetime.strptime(text[:-1], _TS_FORMAT).replace(tzinfo=timezone.utc)


class EventKind(enum.Enum):
    ATTEMPT = "attempt"
    STAGE_RESULT = "stage_result"
    REVIEW_REQUESTED = "review_requested"


_REQUIRED_FIELDS = (
    "run_id",
    "stage",
    "attempt_index",
    "kind",
    "ts_start",
    "ts_end",
    "prompt_tokens",
    "completion_tokens",
    "outcome",
    "error_excerpt",
    "artifact_locator",
    "prompt_hash",
)


@dataclass(frozen=True)
class TraceEvent:
    run_id: str
    stage: str
    attempt_index: int
    kind: EventKind
    ts_start: datetime
    ts_end: datetime
    prompt_tokens: int
    completion_tokens: int
    outcome: str
    error_excerpt: str | None = None
    artifact_locator: str | None = None
    prompt_hash: str | None = None

    def __post_init__(self) -> None:
        if self.ts_start > self.ts_end:
            raise ValueError("ts_start must not exceed ts_end")
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def key(self) -> tuple[str, str, int, str]:
        return (self.run_id, self.stage, self.attempt_index, self.kind.value)

    def to_record(self) -> dict:
        record = asdict(self)
        record["kind"] = self.kind.value
        record["ts_start"] = format_ts(self.ts_start)
        record["ts_end"] = format_ts(self.ts_end)
        return record

    @classmethod
    def from_record(cls, record: dict) -> "TraceEvent":
        missing = [f for f in _REQUIRED_FIELDS if f not in record]
        if missing:
            raise ValueError(f"record missing fields: {', '.join(missing)}")
        return cls(
            run_id=record["run_id"],
            stage=record["stage"],
            attempt_index=int(record["attempt_index"]),
            kind=EventKind(record["kind"]),
            ts_start=parse_ts(record["ts_start"]),
            ts_end=parse_ts(record["ts_end"]),
            prompt_tokens=int(record["prompt_tokens"]),
            completion_tokens=int(record["completion_tokens"]),
            outcome=record["outcome"],
            error_excerpt=record["error_excerpt"],
            artifact_locator=record["artifact_locator"],
            prompt_hash=record["prompt_hash"],
        )


class TraceStore:
    """File-backed event log; append-only, multi-writer safe per record."""

    def __init__(self, path: Path = DEFAULT_TRACE_PATH):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._seen: set[tuple[str, str, int, str]] = set()
        if self.path.exists():
            for event in self._iter_events():
                self._seen.add(event.key)

    def append_event(self, event: TraceEvent) -> None:
        line = json.dumps(event.to_record(), ensure_ascii=False) + "\n"
        with self._lock:
            if event.key in self._seen:
                raise DuplicateEvent(f"event already recorded: {event.key}")
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as f:
                    f.write(line)
            except OSError as exc:
                raise StoreUnwritable(f"cannot append to {self.path}: {exc}") from exc
            self._seen.add(event.key)

    def _iter_events(self):
        with self.path.open("r", encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                yield TraceEvent.from_record(json.loads(line))

    def load_all(self) -> list[TraceEvent]:
        if not self.path.exists():
            return []
        return list(self._iter_events())

    def load_run(self, run_id: str) -> list[TraceEvent]:
        events = [e for e in self.load_all() if e.run_id == run_id]
        if not events:
            raise RunNotFound(f"no events for run: {run_id}")
        return events


@dataclass(frozen=True)
class TraceIssue:
    line_number: int
    message: str


def verify_trace(store_path: Path) -> list[TraceIssue]:
    """Line-by-line integrity check; an empty report means a valid store."""
    path = Path(store_path)
    if not path.exists():
        raise FileNotFoundError(f"trace file missing: {path}")

    issues: list[TraceIssue] = []
    seen: set[tuple[str, str, int, str]] = set()
    lines = path.read_text(encoding="utf-8").splitlines()
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            issues.append(TraceIssue(number, "malformed record (not valid JSON)"))
            continue
        try:
            ts_start = parse_ts(record["ts_start"])
            ts_end = parse_ts(record["ts_end"])
        except (KeyError, ValueError) as exc:
            issues.append(TraceIssue(number, f"bad timestamps: {exc}"))
            continue
        missing = [f for f in _REQUIRED_FIELDS if f not in record]
        if missing:
            issues.append(TraceIssue(number, f"missing fields: {', '.join(missing)}"))
            continue
        if record["kind"] not in {k.value for k in EventKind}:
            issues.append(TraceIssue(number, f"unknown kind: {record['kind']}"))
            continue
        if ts_start > ts_end:
            issues.append(TraceIssue(number, "ts_end precedes ts_start"))
        key = (record["run_id"], record["stage"], record["attempt_index"], record["kind"])
        if key in seen:
            issues.append(TraceIssue(number, f"duplicate event key: {key}"))
        seen.add(key)
    return issues
