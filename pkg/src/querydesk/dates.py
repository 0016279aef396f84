"""Deterministic date-expression evaluation and timestamp bucketing.

All ranges are half-open calendar-date intervals [start_date, end_date)
interpreted in a session timezone; a single day is [d, d+1). Bucketing
maps instants to grain labels (hour/day/week/month) computed in that
timezone, with weeks numbered per ISO-8601.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from typing import Literal, Union
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

Grain = Literal["hour", "day", "week", "month"]
GRAINS: tuple[Grain, ...] = ("hour", "day", "week", "month")


class InvalidExpr(ValueError):
    """Raised for date expressions that cannot denote a range (month 13, n=0, ...)."""


def _zone(tz: str) -> ZoneInfo:
    try:
        return ZoneInfo(tz)
    except (ZoneInfoNotFoundError, ValueError) as exc:
        raise InvalidExpr(f"unknown timezone {tz!r}") from exc


@dataclass(frozen=True)
class DateRange:
    """Half-open [start_date, end_date) in timezone `tz`; start included, end excluded."""

    start_date: date
    end_date: date
    tz: str

    def __post_init__(self) -> None:
        if self.end_date <= self.start_date:
            raise InvalidExpr(
                f"end_date must be after start_date, got [{self.start_date}, {self.end_date})"
            )
        _zone(self.tz)

    def start_instant(self) -> datetime:
        return datetime.combine(self.start_date, datetime.min.time(), tzinfo=_zone(self.tz))

    def end_instant(self) -> datetime:
        return datetime.combine(self.end_date, datetime.min.time(), tzinfo=_zone(self.tz))

    def contains(self, ts: datetime) -> bool:
        """Half-open membership; `ts` must be timezone-aware."""
        return self.start_instant() <= ts < self.end_instant()

    def to_json(self) -> dict:
        return {
            "start_date": self.start_date.isoformat(),
            "end_date": self.end_date.isoformat(),
            "tz": self.tz,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DateRange":
        try:
            return cls(
                start_date=date.fromisoformat(obj["start_date"]),
                end_date=date.fromisoformat(obj["end_date"]),
                tz=obj.get("tz", "UTC"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidExpr):
                raise
            raise InvalidExpr(f"malformed date range: {obj!r}") from exc


# --- expression variants -------------------------------------------------

@dataclass(frozen=True)
class SingleDay:
    day: date


@dataclass(frozen=True)
class MonthOf:
    year: int
    month: int


@dataclass(frozen=True)
class QuarterOf:
    year: int
    quarter: int


@dataclass(frozen=True)
class RelativeDay:
    """Offset in days from the session-local date of `now`; -1 is yesterday."""

    offset: int


@dataclass(frozen=True)
class RelativeCalendarUnit:
    """A full calendar unit `offset` units before the one containing `now` (offset < 0).

    Weeks start Monday per ISO-8601; offset=-1 with unit=month is the
    previous full calendar month.
    """

    unit: Literal["week", "month"]
    offset: int


@dataclass(frozen=True)
class TrailingWindow:
    """n days (or n*7 days) ending at today 00:00 local; today itself excluded."""

    n: int
    unit: Literal["days", "weeks"]


@dataclass(frozen=True)
class ThisUnit:
    """Current calendar unit through the end of today (today included)."""

    unit: Literal["week", "month"]


@dataclass(frozen=True)
class Explicit:
    start: date
    end: date


DateExpr = Union[
    SingleDay,
    MonthOf,
    QuarterOf,
    RelativeDay,
    RelativeCalendarUnit,
    TrailingWindow,
    ThisUnit,
    Explicit,
]


def local_date(now: datetime, tz: str) -> date:
    """Calendar date of the aware instant `now` in timezone `tz`."""
    if now.tzinfo is None:
        raise InvalidExpr("now must be timezone-aware")
    return now.astimezone(_zone(tz)).date()


def _month_start(d: date) -> date:
    return d.replace(day=1)


def _add_months(d: date, months: int) -> date:
    # d is always a first-of-month here, so no day clamping is needed.
    total = d.year * 12 + (d.month - 1) + months
    return date(total // 12, total % 12 + 1, 1)


def _week_start(d: date) -> date:
    return d - timedelta(days=d.weekday())


def resolve(expr: DateExpr, now: datetime, tz: str) -> DateRange:
    """Evaluate a date expression into a half-open DateRange in `tz`.

    Pure function of (expr, now, tz); `now` anchors the relative variants.
    """
    _zone(tz)
    if isinstance(expr, SingleDay):
        return DateRange(expr.day, expr.day + timedelta(days=1), tz)
    if isinstance(expr, MonthOf):
        if not 1 <= expr.month <= 12:
            raise InvalidExpr(f"month out of range: {expr.month}")
        start = date(expr.year, expr.month, 1)
        return DateRange(start, _add_months(start, 1), tz)
    if isinstance(expr, QuarterOf):
        if not 1 <= expr.quarter <= 4:
            raise InvalidExpr(f"quarter out of range: {expr.quarter}")
        start = date(expr.year, 3 * (expr.quarter - 1) + 1, 1)
        return DateRange(start, _add_months(start, 3), tz)
    if isinstance(expr, RelativeDay):
        day = local_date(now, tz) + timedelta(days=expr.offset)
        return DateRange(day, day + timedelta(days=1), tz)
    if isinstance(expr, RelativeCalendarUnit):
        if expr.offset >= 0:
            raise InvalidExpr("calendar-unit offset must be negative; use ThisUnit for the current one")
        today = local_date(now, tz)
        if expr.unit == "week":
            start = _week_start(today) + timedelta(weeks=expr.offset)
            return DateRange(start, start + timedelta(days=7), tz)
        if expr.unit == "month":
            start = _add_months(_month_start(today), expr.offset)
            return DateRange(start, _add_months(start, 1), tz)
        raise InvalidExpr(f"unknown calendar unit {expr.unit!r}")
    if isinstance(expr, TrailingWindow):
        if expr.n < 1:
            raise InvalidExpr("trailing window length must be >= 1")
        days = expr.n * 7 if expr.unit == "weeks" else expr.n
        if expr.unit not in ("days", "weeks"):
            raise InvalidExpr(f"unknown trailing unit {expr.unit!r}")
        today = local_date(now, tz)
        return DateRange(today - timedelta(days=days), today, tz)
    if isinstance(expr, ThisUnit):
        today = local_date(now, tz)
        end = today + timedelta(days=1)
        if expr.unit == "week":
            return DateRange(_week_start(today), end, tz)
        if expr.unit == "month":
            return DateRange(_month_start(today), end, tz)
        raise InvalidExpr(f"unknown calendar unit {expr.unit!r}")
    if isinstance(expr, Explicit):
        return DateRange(expr.start, expr.end, tz)
    raise InvalidExpr(f"unsupported expression {expr!r}")


def bucket(ts: datetime, grain: Grain, tz: str) -> str:
    """Grain label for an aware instant, computed in `tz`.

    Labels: hour "YYYY-MM-DDTHH", day "YYYY-MM-DD", week ISO "GGGG-Www",
    month "YYYY-MM".
    """
    if ts.tzinfo is None:
        raise InvalidExpr("timestamp must be timezone-aware")
    local = ts.astimezone(_zone(tz))
    if grain == "hour":
        return local.strftime("%Y-%m-%dT%H")
    if grain == "day":
        return local.date().isoformat()
    if grain == "week":
        iso = local.isocalendar()
        return f"{iso.year:04d}-W{iso.week:02d}"
    if grain == "month":
        return f"{local.year:04d}-{local.month:02d}"
    raise InvalidExpr(f"unknown grain {grain!r}")


def bucket_labels(rng: DateRange, grain: Grain) -> list[str]:
    """Ordered labels of all buckets intersecting [start, end); no gaps, no repeats.

    Used to emit empty timeseries buckets; DST days shorter or longer than
    24h still yield exactly one day label.
    """
    labels: list[str] = []
    if grain == "hour":
        # Step in absolute (UTC) time so DST gaps/overlaps cannot skip or loop;
        # naive arithmetic on aware datetimes moves the wall clock instead.
        t = rng.start_instant().astimezone(timezone.utc)
        end = rng.end_instant().astimezone(timezone.utc)
        step = timedelta(hours=1)
        while t < end:
            label = bucket(t, "hour", rng.tz)
            if not labels or labels[-1] != label:
                labels.append(label)
            t += step
        return labels
    d = rng.start_date
    zone = _zone(rng.tz)
    while d < rng.end_date:
        label = bucket(datetime.combine(d, datetime.min.time(), tzinfo=zone) + timedelta(hours=12),
                       grain, rng.tz)
        if not labels or labels[-1] != label:
            labels.append(label)
        d += timedelta(days=1)
    return labels
