"""Domain types, day arithmetic and the event-log codec.

The event log is a UTF-8, comma-separated file with the header::

    ts,user_id,pin_id,surface,action,request_id,topic,slot

Absent ``request_id`` / ``slot`` values are written as empty fields.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Optional, Sequence, Union

SECONDS_PER_DAY = 86400

EVENT_LOG_HEADER = "ts,user_id,pin_id,surface,action,request_id,topic,slot"


class EventLogError(ValueError):
    """Raised for malformed event-log input."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class Surface(enum.Enum):
    RELATED_PINS = "related_pins"
    OWN_PROFILE = "own_profile"
    OTHER = "other"


class Action(enum.Enum):
    IMPRESSION = "impression"
    GRID_CLICK = "grid_click"
    REPIN = "repin"
    CLICK = "click"
    LONG_CLICK = "long_click"


class Topic(enum.Enum):
    EVENT_PLANNING = "event_planning"
    HEALTH = "health"
    HOME_DECOR = "home_decor"
    DIY_AND_CRAFTS = "diy_and_crafts"
    QUOTES = "quotes"
    BEAUTY = "beauty"
    PARENTING = "parenting"
    TRAVEL = "travel"
    ENTERTAINMENT = "entertainment"
    ANIMALS = "animals"
    EDUCATION = "education"
    ART = "art"
    ARCHITECTURE = "architecture"
    VEHICLES = "vehicles"
    ELECTRONICS = "electronics"
    FINANCE = "finance"
    UNKNOWN = "unknown"


# The 16 content topics, excluding UNKNOWN.
CONTENT_TOPICS: tuple[Topic, ...] = tuple(t for t in Topic if t is not Topic.UNKNOWN)


class TaskId(enum.Enum):
    GRID_CLICK = "grid_click"
    REPIN = "repin"
    CLICK = "click"
    LONG_CLICK = "long_click"
    REPIN_AND_REVISIT = "repin_and_revisit"


# Engagement tasks of the base multi-task loss; the revisit head is added on top.
BASE_TASKS: tuple[TaskId, ...] = (TaskId.GRID_CLICK, TaskId.REPIN, TaskId.CLICK, TaskId.LONG_CLICK)
ALL_TASKS: tuple[TaskId, ...] = BASE_TASKS + (TaskId.REPIN_AND_REVISIT,)


@dataclass(frozen=True, slots=True)
class EventRecord:
    timestamp: int
    user_id: str
    pin_id: str
    surface: Surface
    action: Action
    request_id: str = ""
    topic: Topic = Topic.UNKNOWN
    slot: Optional[int] = None

    @property
    def day(self) -> int:
        return day_index(self.timestamp)

    def validate(self) -> None:
        if self.timestamp < 0:
            raise EventLogError(f"negative timestamp {self.timestamp}", field="ts")
        if not self.user_id:
            raise EventLogError("empty user_id", field="user_id")
        if not self.pin_id:
            raise EventLogError("empty pin_id", field="pin_id")
        if self.surface is Surface.RELATED_PINS and not self.request_id:
            raise EventLogError("related_pins event without request_id", field="request_id")
        if self.slot is not None:
            if self.surface is not Surface.RELATED_PINS:
                raise EventLogError("slot set on a non related_pins event", field="slot")
            if self.slot < 0:
                raise EventLogError(f"negative slot {self.slot}", field="slot")
        for name in ("user_id", "pin_id", "request_id"):
            value = getattr(self, name)
            if "," in value or "\n" in value or "\r" in value:
                raise EventLogError(f"{name} contains a separator character", field=name)


def day_index(timestamp: int) -> int:
    """UTC calendar day of an epoch-seconds timestamp."""
    return timestamp // SECONDS_PER_DAY


def day_start(day: int) -> int:
    return day * SECONDS_PER_DAY


def _parse_enum(enum_cls, token: str, field: str, line: int):
    try:
        return enum_cls(token)
    except ValueError:
        raise EventLogError(f"unknown {field} token {token!r}", line=line, field=field) from None


def _parse_int(token: str, field: str, line: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise EventLogError(f"invalid integer {token!r} in {field}", line=line, field=field) from None


_SURFACES = {s.value: s for s in Surface}
_ACTIONS = {a.value: a for a in Action}
_TOPICS = {t.value: t for t in Topic}


def _parse_line(text: str, lineno: int) -> EventRecord:
    parts = text.split(",")
    if len(parts) != 8:
        raise EventLogError(f"expected 8 fields, got {len(parts)}", line=lineno, field="line")
    ts, user_id, pin_id, surface, action, request_id, topic, slot = parts
    surface_v = _SURFACES.get(surface) or _parse_enum(Surface, surface, "surface", lineno)
    action_v = _ACTIONS.get(action) or _parse_enum(Action, action, "action", lineno)
    topic_v = _TOPICS.get(topic) or _parse_enum(Topic, topic, "topic", lineno)
    record = EventRecord(
        timestamp=_parse_int(ts, "ts", lineno),
        user_id=user_id,
        pin_id=pin_id,
        surface=surface_v,
        action=action_v,
        request_id=request_id,
        topic=topic_v,
        slot=_parse_int(slot, "slot", lineno) if slot else None,
    )
    try:
        record.validate()
    except EventLogError as exc:
        raise EventLogError(str(exc), line=lineno, field=exc.field) from None
    return record


def iter_event_log(stream: Union[IO[bytes], IO[str], bytes, str]) -> Iterator[EventRecord]:
    """Yield records from an event log, in file order."""
    if isinstance(stream, (bytes, str)):
        text = stream.decode("utf-8") if isinstance(stream, bytes) else stream
        lines: Iterable[str] = io.StringIO(text)
    else:
        lines = stream
    first = True
    for lineno, raw in enumerate(lines, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        line = line.rstrip("\r\n")
        if first:
            first = False
            if line != EVENT_LOG_HEADER:
                raise EventLogError(f"bad header {line!r}", line=lineno, field="header")
            continue
        if not line:
            continue
        yield _parse_line(line, lineno)
    if first:
        raise EventLogError("missing header", line=1, field="header")


def parse_event_log(stream) -> list[EventRecord]:
    return list(iter_event_log(stream))


def format_event(record: EventRecord) -> str:
    slot = "" if record.slot is None else str(record.slot)
    return (
        f"{record.timestamp},{record.user_id},{record.pin_id},{record.surface.value},"
        f"{record.action.value},{record.request_id},{record.topic.value},{slot}"
    )


def write_event_log(records: Iterable[EventRecord], stream: Optional[IO[bytes]] = None) -> bytes:
    """Serialize records; returns the bytes and also writes them to ``stream`` if given."""
    lines = [EVENT_LOG_HEADER]
    lines.extend(format_event(r) for r in records)
    data = ("\n".join(lines) + "\n").encode("utf-8")
    if stream is not None:
        stream.write(data)
    return data


def read_event_log_file(path) -> list[EventRecord]:
    with open(path, "rb") as fh:
        return parse_event_log(fh)


def write_event_log_file(path, records: Sequence[EventRecord]) -> None:
    with open(path, "wb") as fh:
        write_event_log(records, fh)
