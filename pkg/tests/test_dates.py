"""Golden cases and tiling properties for date resolution and bucketing.

Expected ranges were derived by hand from calendar arithmetic and checked
against printed ISO-week tables; they are frozen here, not recomputed.
"""

from __future__ import annotations

from datetime import date, datetime, timedelta, timezone
from zoneinfo import ZoneInfo

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from querydesk.dates import (
    DateRange,
    Explicit,
    InvalidExpr,
    MonthOf,
    QuarterOf,
    RelativeCalendarUnit,
    RelativeDay,
    SingleDay,
    ThisUnit,
    TrailingWindow,
    bucket,
    bucket_labels,
    resolve,
)

LA = "America/Los_Angeles"
# 2025-05-15 10:00 local in LA (a Thursday).
NOW = datetime(2025, 5, 15, 17, 0, tzinfo=timezone.utc)


def d(s: str) -> date:
    return date.fromisoformat(s)


RESOLVE_GOLDENS = [
    # (expr, now, tz, start, end)
    (SingleDay(d("2025-04-14")), NOW, LA, "2025-04-14", "2025-04-15"),
    (SingleDay(d("2024-02-29")), NOW, LA, "2024-02-29", "2024-03-01"),
    (SingleDay(d("2025-12-31")), NOW, LA, "2025-12-31", "2026-01-01"),
    (SingleDay(d("2025-03-09")), NOW, LA, "2025-03-09", "2025-03-10"),  # 23h DST day
    (MonthOf(2025, 5), NOW, LA, "2025-05-01", "2025-06-01"),
    (MonthOf(2025, 12), NOW, LA, "2025-12-01", "2026-01-01"),
    (MonthOf(2024, 2), NOW, LA, "2024-02-01", "2024-03-01"),
    (QuarterOf(2025, 1), NOW, LA, "2025-01-01", "2025-04-01"),
    (QuarterOf(2025, 2), NOW, LA, "2025-04-01", "2025-07-01"),
    (QuarterOf(2025, 3), NOW, LA, "2025-07-01", "2025-10-01"),
    (QuarterOf(2025, 4), NOW, LA, "2025-10-01", "2026-01-01"),
    (RelativeDay(-1), NOW, LA, "2025-05-14", "2025-05-15"),
    (RelativeDay(0), NOW, LA, "2025-05-15", "2025-05-16"),
    # 00:30 UTC on May 1 is still April 30 in LA.
    (RelativeDay(-1), datetime(2025, 5, 1, 0, 30, tzinfo=timezone.utc), LA,
     "2025-04-29", "2025-04-30"),
    (TrailingWindow(4, "weeks"), NOW, LA, "2025-04-17", "2025-05-15"),
    (TrailingWindow(7, "days"), NOW, LA, "2025-05-08", "2025-05-15"),
    (TrailingWindow(1, "days"), NOW, LA, "2025-05-14", "2025-05-15"),
    (ThisUnit("week"), NOW, LA, "2025-05-12", "2025-05-16"),
    # On a Monday, "this week" is just that day.
    (ThisUnit("week"), datetime(2025, 5, 12, 17, 0, tzinfo=timezone.utc), LA,
     "2025-05-12", "2025-05-13"),
    (ThisUnit("month"), NOW, LA, "2025-05-01", "2025-05-16"),
    (RelativeCalendarUnit("week", -1), NOW, LA, "2025-05-05", "2025-05-12"),
    (RelativeCalendarUnit("week", -2), NOW, LA, "2025-04-28", "2025-05-05"),
    (RelativeCalendarUnit("month", -1), NOW, LA, "2025-04-01", "2025-05-01"),
    # Year wrap and short-month cases.
    (RelativeCalendarUnit("month", -1), datetime(2025, 1, 10, 17, 0, tzinfo=timezone.utc),
     LA, "2024-12-01", "2025-01-01"),
    (RelativeCalendarUnit("month", -1), datetime(2025, 3, 31, 17, 0, tzinfo=timezone.utc),
     LA, "2025-02-01", "2025-03-01"),
    # ISO-week rollover: previous week from Thu 2025-01-02.
    (RelativeCalendarUnit("week", -1), datetime(2025, 1, 2, 17, 0, tzinfo=timezone.utc),
     LA, "2024-12-23", "2024-12-30"),
    (Explicit(d("2025-04-14"), d("2025-04-15")), NOW, LA, "2025-04-14", "2025-04-15"),
    (MonthOf(2025, 5), NOW, "UTC", "2025-05-01", "2025-06-01"),
]


@pytest.mark.parametrize("expr,now,tz,start,end", RESOLVE_GOLDENS)
def test_resolve_goldens(expr, now, tz, start, end):
    rng = resolve(expr, now, tz)
    assert (rng.start_date.isoformat(), rng.end_date.isoformat()) == (start, end)
    assert rng.tz == tz


BUCKET_GOLDENS = [
    (datetime(2025, 1, 1, 12, 0, tzinfo=timezone.utc), "week", "UTC", "2025-W01"),
    (datetime(2024, 12, 30, 0, 0, tzinfo=timezone.utc), "week", "UTC", "2025-W01"),
    (datetime(2024, 12, 29, 12, 0, tzinfo=timezone.utc), "week", "UTC", "2024-W52"),
    (datetime(2021, 1, 1, 12, 0, tzinfo=timezone.utc), "week", "UTC", "2020-W53"),
    (datetime(2026, 1, 1, 0, 0, tzinfo=timezone.utc), "week", "UTC", "2026-W01"),
    # 06:59 UTC is 23:59 the previous day in LA (UTC-7 in April).
    (datetime(2025, 4, 15, 6, 59, tzinfo=timezone.utc), "day", LA, "2025-04-14"),
    (datetime(2025, 4, 15, 7, 0, tzinfo=timezone.utc), "day", LA, "2025-04-15"),
    (datetime(2025, 4, 15, 6, 30, tzinfo=timezone.utc), "hour", LA, "2025-04-14T23"),
    (datetime(2025, 1, 15, 12, 0, tzinfo=timezone.utc), "month", "UTC", "2025-01"),
    (datetime(2025, 5, 1, 3, 0, tzinfo=timezone.utc), "month", LA, "2025-04"),
    (datetime(2025, 4, 14, 23, 30, tzinfo=ZoneInfo(LA)), "day", LA, "2025-04-14"),
]


@pytest.mark.parametrize("ts,grain,tz,label", BUCKET_GOLDENS)
def test_bucket_goldens(ts, grain, tz, label):
    assert bucket(ts, grain, tz) == label


def test_invalid_expressions():
    with pytest.raises(InvalidExpr):
        resolve(MonthOf(2025, 13), NOW, LA)
    with pytest.raises(InvalidExpr):
        resolve(QuarterOf(2025, 0), NOW, LA)
    with pytest.raises(InvalidExpr):
        resolve(TrailingWindow(0, "days"), NOW, LA)
    with pytest.raises(InvalidExpr):
        resolve(RelativeCalendarUnit("week", 0), NOW, LA)
    with pytest.raises(InvalidExpr):
        resolve(Explicit(d("2025-04-15"), d("2025-04-14")), NOW, LA)
    with pytest.raises(InvalidExpr):
        resolve(SingleDay(d("2025-04-14")), NOW, "Not/AZone")
    with pytest.raises(InvalidExpr):
        DateRange(d("2025-04-15"), d("2025-04-15"), LA)


def test_month_ranges_compose_half_open():
    for month in range(1, 12):
        a = resolve(MonthOf(2025, month), NOW, LA)
        b = resolve(MonthOf(2025, month + 1), NOW, LA)
        assert a.end_date == b.start_date


def test_range_contains_is_half_open():
    rng = resolve(SingleDay(d("2025-04-14")), NOW, LA)
    zone = ZoneInfo(LA)
    assert rng.contains(datetime(2025, 4, 14, 0, 0, tzinfo=zone))
    assert rng.contains(datetime(2025, 4, 14, 23, 59, 59, tzinfo=zone))
    assert not rng.contains(datetime(2025, 4, 15, 0, 0, tzinfo=zone))
    assert not rng.contains(datetime(2025, 4, 13, 23, 59, 59, tzinfo=zone))


def test_bucket_labels_day_over_dst_transitions():
    # Spring forward 2025-03-09 and fall back 2025-11-02 each appear once.
    spring = bucket_labels(DateRange(d("2025-03-08"), d("2025-03-11"), LA), "day")
    assert spring == ["2025-03-08", "2025-03-09", "2025-03-10"]
    fall = bucket_labels(DateRange(d("2025-11-01"), d("2025-11-04"), LA), "day")
    assert fall == ["2025-11-01", "2025-11-02", "2025-11-03"]


def test_bucket_labels_hour_counts_respect_dst():
    # The 23-hour day and the 25-hour day keep hour labels unique in order.
    short = bucket_labels(DateRange(d("2025-03-09"), d("2025-03-10"), LA), "hour")
    assert len(short) == 23
    long = bucket_labels(DateRange(d("2025-11-02"), d("2025-11-03"), LA), "hour")
    assert len(long) == 24  # two UTC hours share the 01 label
    assert len(set(long)) == 24


def test_bucket_labels_week_spans_year_boundary():
    labels = bucket_labels(DateRange(d("2024-12-23"), d("2025-01-13"), "UTC"), "week")
    assert labels == ["2024-W52", "2025-W01", "2025-W02"]


@st.composite
def ranges(draw):
    start = draw(st.dates(min_value=date(2020, 1, 1), max_value=date(2026, 12, 1)))
    span = draw(st.integers(min_value=1, max_value=120))
    tz = draw(st.sampled_from(["UTC", LA, "Europe/Berlin", "Asia/Kolkata"]))
    return DateRange(start, start + timedelta(days=span), tz)


@given(ranges(), st.sampled_from(["day", "week", "month"]),
       st.integers(min_value=0, max_value=10**7))
@settings(max_examples=200, deadline=None)
def test_every_instant_falls_in_exactly_one_emitted_bucket(rng, grain, offset_seconds):
    labels = bucket_labels(rng, grain)
    assert len(labels) == len(set(labels))
    span = (rng.end_instant() - rng.start_instant()).total_seconds()
    ts = rng.start_instant() + timedelta(seconds=offset_seconds % int(span))
    assert bucket(ts, grain, rng.tz) in labels


@given(ranges())
@settings(max_examples=100, deadline=None)
def test_day_buckets_tile_the_range(rng):
    labels = bucket_labels(rng, "day")
    assert len(labels) == (rng.end_date - rng.start_date).days
    assert labels[0] == rng.start_date.isoformat()
    assert labels[-1] == (rng.end_date - timedelta(days=1)).isoformat()
