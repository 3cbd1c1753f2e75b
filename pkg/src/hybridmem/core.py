"""Shared domain types, id schemes and calendar arithmetic."""

from __future__ import annotations

import calendar
import hashlib
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Any, Iterable, Mapping

import numpy as np

EVENT_TYPES = (
    "episodic",
    "plan",
    "preference",
    "fact",
    "relationship",
    "status",
    "procedure",
    "other",
)
WINDOW_UNITS = ("day", "week", "month", "year")
STAGES = ("index", "retrieve", "generate", "judge")


class ValidationError(ValueError):
    """Raised when an input record violates a domain invariant."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ---------------------------------------------------------------------------
# Time
# ---------------------------------------------------------------------------

_RFC3339 = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})[Tt ](\d{2}):(\d{2}):(\d{2})(\.\d+)?([Zz]|[+-]\d{2}:\d{2})$"
)


def parse_timestamp(value: Any, field_name: str = "timestamp") -> int:
    """Coerce an epoch-seconds number or an RFC 3339 string to UTC unix seconds."""
    if isinstance(value, bool):
        raise ValidationError(field_name, f"malformed timestamp {value!r}")
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise ValidationError(field_name, f"malformed timestamp {value!r}")
        return int(value)
    if isinstance(value, str):
        s = value.strip()
        if re.fullmatch(r"-?\d+", s):
            return int(s)
        m = _RFC3339.match(s)
        if m:
            y, mo, d, hh, mm, ss, frac, tz = m.groups()
            try:
                dt = datetime(int(y), int(mo), int(d), int(hh), int(mm), int(ss), tzinfo=timezone.utc)
            except ValueError as exc:
                raise ValidationError(field_name, f"malformed timestamp {value!r}") from exc
            if tz not in ("Z", "z"):
                sign = 1 if tz[0] == "+" else -1
                offset = timedelta(hours=int(tz[1:3]), minutes=int(tz[4:6]))
                dt = dt - sign * offset
            return int(dt.timestamp())
    raise ValidationError(field_name, f"malformed timestamp {value!r}")


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class TimeInterval:
    """Closed interval ``[start, end]`` in unix seconds."""

    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValidationError("time_range", f"start {self.start} > end {self.end}")

    @classmethod
    def point(cls, ts: int) -> "TimeInterval":
        return cls(ts, ts)

    @property
    def is_point(self) -> bool:
        return self.start == self.end

    @property
    def length(self) -> int:
        return self.end - self.start

    @property
    def center(self) -> float:
        return (self.start + self.end) / 2.0

    def contains(self, ts: float) -> bool:
        return self.start <= ts <= self.end

    def covers(self, other: "TimeInterval") -> bool:
        return self.start <= other.start and other.end <= self.end

    def intersects(self, other: "TimeInterval") -> bool:
        return self.start <= other.end and other.start <= self.end

    def hull(self, other: "TimeInterval") -> "TimeInterval":
        return TimeInterval(min(self.start, other.start), max(self.end, other.end))

    def widen(self, seconds: int) -> "TimeInterval":
        return TimeInterval(self.start - seconds, self.end + seconds)

    def to_list(self) -> list[int]:
        return [self.start, self.end]

    @classmethod
    def from_list(cls, pair: Iterable[Any]) -> "TimeInterval":
        a, b = list(pair)
        return cls(int(a), int(b))


def _epoch(d: date) -> int:
    return calendar.timegm(d.timetuple())


def window_of(timestamp: int, unit: str) -> TimeInterval:
    """Calendar-aligned UTC window (closed form) containing ``timestamp``.

    Weeks are ISO weeks running Monday through Sunday.
    """
    d = datetime.fromtimestamp(timestamp, tz=timezone.utc).date()
    if unit == "day":
        start, nxt = d, d + timedelta(days=1)
    elif unit == "week":
        start = d - timedelta(days=d.weekday())
        nxt = start + timedelta(days=7)
    elif unit == "month":
        start = d.replace(day=1)
        nxt = date(d.year + (d.month == 12), d.month % 12 + 1, 1)
    elif unit == "year":
        start, nxt = date(d.year, 1, 1), date(d.year + 1, 1, 1)
    else:
        raise ValueError(f"unknown window unit {unit!r}")
    return TimeInterval(_epoch(start), _epoch(nxt) - 1)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


def fragment_id_for(conversation_id: str, speaker: str, timestamp: int, text: str) -> str:
    # Content-addressed so re-ingestion of the same quadruple resolves to the same id.
    h = hashlib.sha256(
        "\x1f".join([conversation_id, speaker, str(timestamp), text]).encode("utf-8")
    ).hexdigest()
    return "f_" + h[:16]


@dataclass(frozen=True)
class MemoryFragment:
    id: str
    conversation_id: str
    speaker: str
    timestamp: int
    text: str
    source_meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.timestamp <= 0:
            raise ValidationError("timestamp", "must be positive")
        if not self.text.strip():
            raise ValidationError("text", "empty after trimming")

    @property
    def interval(self) -> TimeInterval:
        return TimeInterval.point(self.timestamp)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "conversation_id": self.conversation_id,
            "speaker": self.speaker,
            "timestamp": self.timestamp,
            "text": self.text,
            "meta": dict(self.source_meta),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MemoryFragment":
        return cls(
            id=d["id"],
            conversation_id=d["conversation_id"],
            speaker=d["speaker"],
            timestamp=int(d["timestamp"]),
            text=d["text"],
            source_meta=dict(d.get("meta") or {}),
        )


def make_fragment(raw: Mapping[str, Any], default_conversation: str = "default") -> MemoryFragment:
    """Validate a raw ingest record and build a fragment with its content id.

    Accepts ``timestamp`` or ``ts`` for the time field.
    """
    if "timestamp" in raw:
        ts_raw = raw["timestamp"]
    elif "ts" in raw:
        ts_raw = raw["ts"]
    else:
        raise ValidationError("timestamp", "missing")
    ts = parse_timestamp(ts_raw)
    text = raw.get("text")
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("text", "empty after trimming")
    speaker = str(raw.get("speaker") or "")
    conv = str(raw.get("conversation_id") or default_conversation)
    meta = raw.get("meta") or raw.get("source_meta") or {}
    return MemoryFragment(
        id=fragment_id_for(conv, speaker, ts, text),
        conversation_id=conv,
        speaker=speaker,
        timestamp=ts,
        text=text,
        source_meta=dict(meta),
    )


@dataclass
class MemoryEvent:
    """One atomic extracted claim. ``n_m``/``r_m`` carry reinforcement state."""

    id: str
    event_text: str
    frag_ids: list[str]
    time_range: TimeInterval
    event_type: str = "fact"
    participants: list[str] = field(default_factory=list)
    n_m: int = 0
    r_m: int = 0
    embedding_id: str = ""
    degraded: bool = False
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.frag_ids:
            raise ValidationError("frag_ids", "event must cite at least one fragment")
        if self.event_type not in EVENT_TYPES:
            raise ValidationError("event_type", f"{self.event_type!r} not in {EVENT_TYPES}")
        if self.n_m < 0:
            raise ValidationError("n_m", "negative reinforcement count")
        if not self.r_m:
            self.r_m = self.time_range.end
        if self.r_m < self.time_range.start:
            raise ValidationError("r_m", "earlier than the event start")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "event_text": self.event_text,
            "frag_ids": list(self.frag_ids),
            "time_range": self.time_range.to_list(),
            "event_type": self.event_type,
            "participants": list(self.participants),
            "n_m": self.n_m,
            "r_m": self.r_m,
            "embedding_id": self.embedding_id,
            "degraded": self.degraded,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MemoryEvent":
        return cls(
            id=d["id"],
            event_text=d["event_text"],
            frag_ids=list(d["frag_ids"]),
            time_range=TimeInterval.from_list(d["time_range"]),
            event_type=d.get("event_type", "fact"),
            participants=list(d.get("participants", [])),
            n_m=int(d.get("n_m", 0)),
            r_m=int(d.get("r_m", 0)),
            embedding_id=d.get("embedding_id", ""),
            degraded=bool(d.get("degraded", False)),
            extra=dict(d.get("extra", {})),
        )


def unit_normalize(values: Any) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / norm


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostRecord:
    stage: str
    task: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_ms: int = 0
    call_count: int = 1


class CostLedger:
    """Append-only per-call cost records with per-stage totals.

    Appends are guarded by a lock so concurrent provider calls reconcile.
    """

    def __init__(self):
        self._records: list[CostRecord] = []
        self._counters: Counter = Counter()
        self._lock = threading.Lock()

    def append(self, record: CostRecord) -> None:
        if record.stage not in STAGES:
            raise ValueError(f"unknown stage {record.stage!r}")
        for name in ("prompt_tokens", "completion_tokens", "wall_ms", "call_count"):
            if getattr(record, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        with self._lock:
            self._records.append(record)

    def bump(self, counter: str, n: int = 1) -> None:
        with self._lock:
            self._counters[counter] += n

    @property
    def records(self) -> list[CostRecord]:
        with self._lock:
            return list(self._records)

    @property
    def counters(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counters)

    def totals(self, include_timing: bool = True) -> dict[str, dict[str, int]]:
        out = {s: {"prompt_tokens": 0, "completion_tokens": 0, "call_count": 0, "records": 0} for s in STAGES}
        if include_timing:
            for s in STAGES:
                out[s]["wall_ms"] = 0
        for r in self.records:
            t = out[r.stage]
            t["prompt_tokens"] += r.prompt_tokens
            t["completion_tokens"] += r.completion_tokens
            t["call_count"] += r.call_count
            t["records"] += 1
            if include_timing:
                t["wall_ms"] += r.wall_ms
        return out

    def tokens(self, stage: str | None = None) -> int:
        return sum(
            r.prompt_tokens + r.completion_tokens
            for r in self.records
            if stage is None or r.stage == stage
        )

    def merge(self, other: "CostLedger") -> None:
        for r in other.records:
            self.append(r)
        for k, v in other.counters.items():
            self.bump(k, v)

    def __len__(self) -> int:
        return len(self._records)
