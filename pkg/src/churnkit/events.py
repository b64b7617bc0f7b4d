"""Canonical event-log model: parsing, sessionization, and the week grid.

Log files are UTF-8 CSV with LF line endings and a fixed 11-column header::

    account_id,char_id,log_id,timestamp,actor_level,target_level,
    money_delta,equip_score,object_id,object_count,guild_id

Timestamps are ISO-8601 UTC with a trailing ``Z`` at second resolution.
Absent optional values are empty strings.  Files list events account-major
(sorted by account id, then chronologically within an account).

All calendar arithmetic happens on a week grid whose epoch is a Wednesday
at 00:00 UTC, matching the weekly maintenance boundary of the source game:
day index 0 covers the epoch's first 24 hours and week index 0 its first
seven days, with floor semantics for instants before the epoch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import AlignmentError, FormatError, ValidationError

LOG_HEADER: tuple[str, ...] = (
    "account_id",
    "char_id",
    "log_id",
    "timestamp",
    "actor_level",
    "target_level",
    "money_delta",
    "equip_score",
    "object_id",
    "object_count",
    "guild_id",
)

CATALOG_HEADER: tuple[str, ...] = ("log_id", "name", "group")

DAY = timedelta(days=1)
WEEK = timedelta(weeks=1)

#: Inactivity gap (strictly) above which two consecutive events of the same
#: account belong to different sessions.
DEFAULT_SESSION_GAP_MINUTES = 15.0

#: Weekday labels aligned with ``day_index % 7`` (the grid epoch is a Wednesday).
WEEKDAY_LABELS: tuple[str, ...] = ("wed", "thu", "fri", "sat", "sun", "mon", "tue")

#: ``day_index % 7`` values that fall on Saturday / Sunday.
WEEKEND_DAY_INDICES: tuple[int, ...] = (3, 4)


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 ``Z``-suffixed UTC timestamp at second resolution."""
    if not text.endswith("Z"):
        raise FormatError(f"timestamp {text!r} must be UTC with a trailing 'Z'")
    try:
        dt = datetime.fromisoformat(text[:-1])
    except (ValueError, FormatError) as exc:
        raise FormatError(f"bad timestamp {text!r}") from exc
    if dt.tzinfo is not None:
        raise FormatError(f"timestamp {text!r} carries a duplicate offset")
    if dt.microsecond:
        raise FormatError(f"timestamp {text!r} is finer than second resolution")
    return dt.replace(tzinfo=timezone.utc)


def format_timestamp(instant: datetime) -> str:
    """Render a UTC datetime in the canonical ``Z``-suffixed form."""
    return f"{instant:%Y-%m-%dT%H:%M:%S}Z"


@dataclass(slots=True)
class Event:
    """One log row.  Treated as immutable after construction."""

    account_id: str
    char_id: str
    log_id: int
    timestamp: datetime
    actor_level: int | None = None
    target_level: int | None = None
    money_delta: int | None = None
    equip_score: float | None = None
    object_id: str | None = None
    object_count: int | None = None
    guild_id: str | None = None


@dataclass(frozen=True)
class EventCatalog:
    """Registry mapping each ``log_id`` to an event name and action group."""

    entries: Mapping[int, tuple[str, str]]

    def __post_init__(self) -> None:
        for log_id, (name, group) in self.entries.items():
            if log_id < 0:
                raise ValidationError(f"catalog log_id {log_id} is negative")
            if not name or not group:
                raise ValidationError(f"catalog entry {log_id} has empty name/group")

    def knows(self, log_id: int) -> bool:
        return log_id in self.entries

    def group_of(self, log_id: int) -> str:
        """Group of a registered id; the sentinel ``unknown`` otherwise."""
        entry = self.entries.get(log_id)
        return entry[1] if entry is not None else "unknown"

    def group_names(self) -> tuple[str, ...]:
        """Registered groups, sorted, with the ``unknown`` sentinel appended."""
        groups = sorted(set(g for _, g in self.entries.values()))
        if "unknown" not in groups:
            groups.append("unknown")
        return tuple(groups)

    @classmethod
    def from_csv(cls, path: str | Path) -> "EventCatalog":
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = tuple(next(reader, ()))
            if header != CATALOG_HEADER:
                raise FormatError(
                    f"catalog header mismatch: expected {','.join(CATALOG_HEADER)}"
                )
            entries: dict[int, tuple[str, str]] = {}
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise FormatError(f"catalog line {line_no}: expected 3 fields")
                try:
                    log_id = int(row[0])
                except (ValueError, FormatError) as exc:
                    raise FormatError(f"catalog line {line_no}: bad log_id") from exc
                if log_id in entries:
                    raise FormatError(f"catalog line {line_no}: duplicate id {log_id}")
                entries[log_id] = (row[1], row[2])
        return cls(entries)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            handle.write(",".join(CATALOG_HEADER) + "\n")
            for log_id in sorted(self.entries):
                name, group = self.entries[log_id]
                handle.write(f"{log_id},{name},{group}\n")


#: Built-in catalog used by the generator and as the parser default.  Twenty
#: event kinds across nine action groups; low ids are the most frequent kinds.
DEFAULT_CATALOG = EventCatalog(
    {
        0: ("EnterWorld", "connection"),
        1: ("LeaveWorld", "connection"),
        2: ("UseSkill", "combat"),
        3: ("KillNpc", "combat"),
        4: ("KillPc", "combat"),
        5: ("Die", "combat"),
        6: ("AcceptQuest", "quest"),
        7: ("CompleteQuest", "quest"),
        8: ("GetItem", "item"),
        9: ("UseItem", "item"),
        10: ("EquipItem", "item"),
        11: ("SellItem", "trade"),
        12: ("BuyItem", "trade"),
        13: ("EarnMoney", "money"),
        14: ("SpendMoney", "money"),
        15: ("LevelUp", "progress"),
        16: ("JoinGuild", "guild"),
        17: ("LeaveGuild", "guild"),
        18: ("GuildInvite", "guild"),
        19: ("Chat", "social"),
    }
)


@dataclass(frozen=True)
class WeekGrid:
    """Wednesday-anchored week grid covering a declared period."""

    epoch: datetime
    period_start: datetime
    period_end: datetime

    def __post_init__(self) -> None:
        for name, instant in (
            ("epoch", self.epoch),
            ("period_start", self.period_start),
            ("period_end", self.period_end),
        ):
            if instant.tzinfo is None or instant.utcoffset() != timedelta(0):
                raise ValidationError(f"{name} must be timezone-aware UTC")
        if self.epoch.weekday() != 2:
            raise AlignmentError("grid epoch must fall on a Wednesday")
        if (self.epoch.hour, self.epoch.minute, self.epoch.second, self.epoch.microsecond) != (0, 0, 0, 0):
            raise AlignmentError("grid epoch must be at 00:00:00 UTC")
        if not self.period_start < self.period_end:
            raise ValidationError("period_start must precede period_end")

    @classmethod
    def spanning(cls, epoch: datetime, start_week: int, weeks: int) -> "WeekGrid":
        """Grid whose period covers ``weeks`` whole weeks from ``start_week``."""
        start = epoch + start_week * WEEK
        return cls(epoch, start, start + weeks * WEEK)


def day_index(grid: WeekGrid, instant: datetime) -> int:
    """Whole days since the grid epoch, floored (negative before the epoch).

    The epoch is midnight-aligned, so the floor equals a UTC calendar-date
    difference; ``toordinal`` keeps this fast on large logs.
    """
    return instant.toordinal() - grid.epoch.toordinal()


def week_index(grid: WeekGrid, instant: datetime) -> int:
    """Whole weeks since the grid epoch, floored."""
    return (instant.toordinal() - grid.epoch.toordinal()) // 7


@dataclass(slots=True)
class Session:
    """A maximal run of one account's events with no gap above the threshold."""

    account_id: str
    start: datetime
    end: datetime
    event_count: int

    @property
    def duration_minutes(self) -> float:
        return (self.end - self.start).total_seconds() / 60.0


@dataclass(slots=True)
class PlayerTimeline:
    """Per-account event history with derived sessions and active days."""

    account_id: str
    events: list[Event]
    sessions: list[Session]
    active_days: set[int]


@dataclass(slots=True)
class ParseDiagnostic:
    line: int
    message: str


@dataclass(slots=True)
class ParseReport:
    """Row-level accounting for one parsed log file."""

    total_rows: int = 0
    parsed: int = 0
    skipped: int = 0
    kept_unknown: int = 0
    diagnostics: list[ParseDiagnostic] = field(default_factory=list)

    def note(self, line: int, message: str) -> None:
        self.diagnostics.append(ParseDiagnostic(line, message))


def _parse_row(row: Sequence[str]) -> Event:
    # Raises ValueError on any malformed field; the caller turns that into a
    # row diagnostic with the offending line number.
    account_id = row[0]
    if not account_id:
        raise ValueError("empty account_id")
    log_id = int(row[2])
    if log_id < 0:
        raise ValueError("negative log_id")
    timestamp = parse_timestamp(row[3])

    actor_level = int(row[4]) if row[4] else None
    if actor_level is not None and actor_level < 0:
        raise ValueError("negative actor_level")
    target_level = int(row[5]) if row[5] else None
    if target_level is not None and target_level < 0:
        raise ValueError("negative target_level")
    money_delta = int(row[6]) if row[6] else None
    equip_score = float(row[7]) if row[7] else None
    if equip_score is not None and not (equip_score >= 0.0):
        raise ValueError("equip_score must be a non-negative real")
    object_id = row[8] or None
    object_count = int(row[9]) if row[9] else None
    if object_count is not None and object_count < 0:
        raise ValueError("negative object_count")
    guild_id = row[10] or None

    return Event(
        account_id,
        row[1],
        log_id,
        timestamp,
        actor_level,
        target_level,
        money_delta,
        equip_score,
        object_id,
        object_count,
        guild_id,
    )


def parse_log_file(
    path: str | Path,
    catalog: EventCatalog = DEFAULT_CATALOG,
    *,
    strict: bool = True,
    period: tuple[datetime, datetime] | None = None,
) -> tuple[list[Event], ParseReport]:
    """Parse a canonical log file.

    A missing or mismatched header is fatal.  Malformed rows are skipped and
    reported with their line number in both modes.  Rows with a ``log_id``
    the catalog does not know are reported in both modes, skipped in strict
    mode and kept (grouped as ``unknown`` downstream) in lenient mode.  When
    ``period`` is given, rows outside ``[start, end)`` are skipped with a
    diagnostic as well.  File order is preserved for the surviving rows.
    """
    report = ParseReport()
    events: list[Event] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader, ()))
        if header != LOG_HEADER:
            raise FormatError(
                f"log header mismatch in {path}: expected {','.join(LOG_HEADER)}"
            )
        known = catalog.entries
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            report.total_rows += 1
            if len(row) != 11:
                report.skipped += 1
                report.note(line_no, f"expected 11 fields, found {len(row)}")
                continue
            try:
                event = _parse_row(row)
            except (ValueError, FormatError) as exc:
                report.skipped += 1
                report.note(line_no, str(exc))
                continue
            if period is not None and not (period[0] <= event.timestamp < period[1]):
                report.skipped += 1
                report.note(line_no, "timestamp outside the declared period")
                continue
            if event.log_id not in known:
                if strict:
                    report.skipped += 1
                    report.note(line_no, f"unknown log_id {event.log_id}")
                    continue
                report.kept_unknown += 1
                report.note(line_no, f"unknown log_id {event.log_id} kept as 'unknown'")
            events.append(event)
            report.parsed += 1
    return events, report


def _format_row(e: Event) -> str:
    return ",".join(
        (
            e.account_id,
            e.char_id,
            str(e.log_id),
            format_timestamp(e.timestamp),
            "" if e.actor_level is None else str(e.actor_level),
            "" if e.target_level is None else str(e.target_level),
            "" if e.money_delta is None else str(e.money_delta),
            "" if e.equip_score is None else repr(e.equip_score),
            "" if e.object_id is None else e.object_id,
            "" if e.object_count is None else str(e.object_count),
            "" if e.guild_id is None else e.guild_id,
        )
    )


def serialize_events(events: Iterable[Event]) -> str:
    """Render events in canonical CSV form (header, LF endings).

    ``serialize_events(parse_log_file(p)[0])`` reproduces the byte content of
    a well-formed canonical file.  Fields never require CSV quoting because
    ids are opaque tokens without commas, quotes, or newlines.
    """
    lines = [",".join(LOG_HEADER)]
    lines.extend(_format_row(e) for e in events)
    lines.append("")
    return "\n".join(lines)


def write_log_file(path: str | Path, events: Iterable[Event]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(serialize_events(events))


def _sessionize_sorted(
    account_id: str, events: Sequence[Event], gap_minutes: float
) -> list[Session]:
    if not events:
        return []
    gap = timedelta(minutes=gap_minutes)
    sessions: list[Session] = []
    start = prev = events[0].timestamp
    count = 1
    for event in events[1:]:
        ts = event.timestamp
        if ts - prev > gap:  # a gap of exactly gap_minutes stays in-session
            sessions.append(Session(account_id, start, prev, count))
            start = ts
            count = 0
        prev = ts
        count += 1
    sessions.append(Session(account_id, start, prev, count))
    return sessions


def sessionize(
    timeline: PlayerTimeline, gap_minutes: float = DEFAULT_SESSION_GAP_MINUTES
) -> list[Session]:
    """Split a timeline into sessions at inactivity gaps above the threshold.

    Sessions partition the events: counts sum to the total and consecutive
    sessions are separated by strictly more than ``gap_minutes``.  A lone
    event yields a zero-duration session.
    """
    if gap_minutes <= 0:
        raise ValidationError("session gap must be positive")
    return _sessionize_sorted(timeline.account_id, timeline.events, gap_minutes)


def build_timelines(
    events: Iterable[Event],
    grid: WeekGrid,
    gap_minutes: float = DEFAULT_SESSION_GAP_MINUTES,
) -> dict[str, PlayerTimeline]:
    """Group events by account into timelines with sessions and active days.

    Events are ordered by timestamp within each account with a stable sort,
    so equal-timestamp rows keep their file order.
    """
    if gap_minutes <= 0:
        raise ValidationError("session gap must be positive")
    by_account: dict[str, list[Event]] = {}
    for event in events:
        by_account.setdefault(event.account_id, []).append(event)
    epoch_ordinal = grid.epoch.toordinal()
    timelines: dict[str, PlayerTimeline] = {}
    for account_id, rows in by_account.items():
        rows.sort(key=lambda e: e.timestamp)
        active = {e.timestamp.toordinal() - epoch_ordinal for e in rows}
        timelines[account_id] = PlayerTimeline(
            account_id,
            rows,
            _sessionize_sorted(account_id, rows, gap_minutes),
            active,
        )
    return timelines


def restrict_events(
    events: Sequence[Event], start: datetime, end: datetime
) -> list[Event]:
    """Events with ``start <= timestamp < end``, preserving order."""
    return [e for e in events if start <= e.timestamp < end]
