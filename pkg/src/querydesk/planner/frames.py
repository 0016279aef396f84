"""Structured intent extracted from an utterance, and its wire codec."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date

from ..dates import (
    DateExpr,
    Explicit,
    MonthOf,
    QuarterOf,
    RelativeCalendarUnit,
    RelativeDay,
    SingleDay,
    ThisUnit,
    TrailingWindow,
)
from ..query import Dimension, FilterClause, GroupByKey, TimeGrain


@dataclass
class IntentFrame:
    """What the user asked for, before targets and dates are resolved.

    The pseudo-metric name "records" marks a request for the raw records
    themselves rather than an aggregate.
    """

    metrics: list[str] = field(default_factory=list)
    date_expr: DateExpr | None = None
    target_phrases: list[str] = field(default_factory=list)
    breakdown: list[GroupByKey] = field(default_factory=list)
    filters: list[FilterClause] = field(default_factory=list)
    ranking: bool = False
    wants_viz: str | None = None
    ambiguity_note: str | None = None

    def is_analytics(self) -> bool:
        return bool(self.metrics or self.target_phrases)


def date_expr_to_json(expr: DateExpr | None) -> dict | None:
    if expr is None:
        return None
    if isinstance(expr, SingleDay):
        return {"kind": "single_day", "date": expr.day.isoformat()}
    if isinstance(expr, MonthOf):
        return {"kind": "month_of", "year": expr.year, "month": expr.month}
    if isinstance(expr, QuarterOf):
        return {"kind": "quarter_of", "year": expr.year, "quarter": expr.quarter}
    if isinstance(expr, RelativeDay):
        return {"kind": "relative_day", "offset": expr.offset}
    if isinstance(expr, RelativeCalendarUnit):
        return {"kind": "relative_calendar_unit", "unit": expr.unit, "offset": expr.offset}
    if isinstance(expr, TrailingWindow):
        return {"kind": "trailing_window", "n": expr.n, "unit": expr.unit}
    if isinstance(expr, ThisUnit):
        return {"kind": "this_unit", "unit": expr.unit}
    if isinstance(expr, Explicit):
        return {"kind": "explicit", "start": expr.start.isoformat(), "end": expr.end.isoformat()}
    raise ValueError(f"unsupported date expression {expr!r}")


def date_expr_from_json(obj: dict | None) -> DateExpr | None:
    if obj is None:
        return None
    kind = obj.get("kind")
    if kind == "single_day":
        return SingleDay(date.fromisoformat(obj["date"]))
    if kind == "month_of":
        return MonthOf(int(obj["year"]), int(obj["month"]))
    if kind == "quarter_of":
        return QuarterOf(int(obj["year"]), int(obj["quarter"]))
    if kind == "relative_day":
        return RelativeDay(int(obj["offset"]))
    if kind == "relative_calendar_unit":
        return RelativeCalendarUnit(obj["unit"], int(obj["offset"]))
    if kind == "trailing_window":
        return TrailingWindow(int(obj["n"]), obj["unit"])
    if kind == "this_unit":
        return ThisUnit(obj["unit"])
    if kind == "explicit":
        return Explicit(date.fromisoformat(obj["start"]), date.fromisoformat(obj["end"]))
    raise ValueError(f"unknown date expression kind {kind!r}")


def frame_to_json(frame: IntentFrame) -> dict:
    return {
        "metrics": list(frame.metrics),
        "date_expr": date_expr_to_json(frame.date_expr),
        "target_phrases": list(frame.target_phrases),
        "breakdown": [
            k.grain if isinstance(k, TimeGrain) else k.field for k in frame.breakdown
        ],
        "filters": [f.to_json() for f in frame.filters],
        "ranking": frame.ranking,
        "wants_viz": frame.wants_viz,
        "ambiguity_note": frame.ambiguity_note,
    }


def frame_from_json(obj: dict) -> IntentFrame:
    from ..dates import GRAINS

    breakdown: list[GroupByKey] = []
    for raw in obj.get("breakdown") or []:
        breakdown.append(TimeGrain(raw) if raw in GRAINS else Dimension(raw))
    return IntentFrame(
        metrics=[str(m) for m in obj.get("metrics") or []],
        date_expr=date_expr_from_json(obj.get("date_expr")),
        target_phrases=[str(t) for t in obj.get("target_phrases") or []],
        breakdown=breakdown,
        filters=[FilterClause.from_json(f) for f in obj.get("filters") or []],
        ranking=bool(obj.get("ranking", False)),
        wants_viz=obj.get("wants_viz"),
        ambiguity_note=obj.get("ambiguity_note"),
    )
