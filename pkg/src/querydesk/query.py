"""The analytics-request DSL: select grammar, request model, and validation.

Select expressions come in three spellings:

* ``col:<field>`` — a raw column, optionally aliased with `` as <alias>``;
* ``<fn>:<field>:<alias>`` — a parameterized aggregate (``count:*:<alias>``
  counts rows); an `` as <alias>`` suffix overrides the third segment;
* ``<name>`` — a computed metric referenced by its alias directly.

Validation is total: any request yields either a canonical ValidatedRequest
or exactly one ValidationError reporting the first failure in the order
endpoint, select, where (dates then filters), group_by, order_by.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import date
from typing import TYPE_CHECKING, Union

from .catalog import (
    AGG_FNS,
    FIELD_NAME_RE,
    GROUPABLE_VALUE_TYPES,
    ORDERED_VALUE_TYPES,
    Catalog,
)
from .dates import GRAINS, DateRange, Grain, InvalidExpr

if TYPE_CHECKING:  # pragma: no cover
    from .planner.frames import IntentFrame

ENDPOINTS = ("aggregate_metrics", "leaderboard", "timeseries", "records")
FILTER_OPS = ("eq", "in", "gte", "lt")

ERROR_KINDS = (
    "UnknownEndpoint",
    "UnknownField",
    "BadAlias",
    "BadDateRange",
    "BadGroupBy",
    "DanglingOrderBy",
    "EmptySelect",
)
# The two kinds the orchestrator may repair programmatically (tier 1); all
# others require a re-draft or a human.
RECOVERABLE_KINDS = frozenset({"BadDateRange", "DanglingOrderBy"})


@dataclass(frozen=True)
class ValidationError:
    kind: str
    detail: str

    @property
    def recoverable_programmatically(self) -> bool:
        return self.kind in RECOVERABLE_KINDS

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "detail": self.detail,
            "recoverable_programmatically": self.recoverable_programmatically,
        }


class QueryError(Exception):
    """Raised by parse-level helpers; validate() converts it into a value."""

    def __init__(self, kind: str, detail: str):
        assert kind in ERROR_KINDS
        self.kind = kind
        self.detail = detail
        super().__init__(f"{kind}: {detail}")

    def as_validation_error(self) -> ValidationError:
        return ValidationError(self.kind, self.detail)


# --- select expressions ---------------------------------------------------

@dataclass(frozen=True)
class ColumnRef:
    field_name: str


@dataclass(frozen=True)
class ComputedRef:
    name: str


@dataclass(frozen=True)
class ParamAgg:
    fn: str
    field_name: str  # "*" means "count rows"


SelectSource = Union[ColumnRef, ComputedRef, ParamAgg]


@dataclass(frozen=True)
class SelectExpr:
    raw: str
    source: SelectSource
    output_alias: str

    def canonical(self) -> str:
        src = self.source
        if isinstance(src, ParamAgg):
            return f"{src.fn}:{src.field_name}:{self.output_alias}"
        if isinstance(src, ColumnRef):
            base = f"col:{src.field_name}"
            default = src.field_name
        else:
            base = src.name
            default = src.name
        if self.output_alias == default:
            return base
        return f"{base} as {self.output_alias}"

    def source_key(self) -> str:
        """Alias-independent identity of what this expression computes."""
        src = self.source
        if isinstance(src, ParamAgg):
            return f"{src.fn}:{src.field_name}"
        if isinstance(src, ColumnRef):
            return f"col:{src.field_name}"
        return src.name


_AS_SPLIT = re.compile(r"\s+as\s+")


def parse_select(text: str, catalog: Catalog) -> SelectExpr:
    """Parse one select string against the catalog.

    Raises QueryError(BadAlias) for malformed shapes and
    QueryError(UnknownField) for names the catalog does not define.
    """
    if not isinstance(text, str) or not text.strip():
        raise QueryError("BadAlias", "empty select expression")
    raw = text
    norm = re.sub(r"\s+", " ", text.strip().lower())
    parts = _AS_SPLIT.split(norm)
    if len(parts) > 2:
        raise QueryError("BadAlias", f"multiple 'as' delimiters in {text!r}")
    expr, alias = (parts[0], parts[1] if len(parts) == 2 else None)
    if alias is not None and not FIELD_NAME_RE.match(alias):
        raise QueryError("BadAlias", f"bad output alias {alias!r}")

    if expr.startswith("col:"):
        name = expr[4:]
        f = catalog.get(name)
        if f is None or f.kind != "column":
            raise QueryError("UnknownField", f"unknown column field {name!r}")
        return SelectExpr(raw=raw, source=ColumnRef(name), output_alias=alias or name)

    if ":" in expr:
        segments = expr.split(":")
        if len(segments) != 3:
            raise QueryError(
                "BadAlias",
                f"aggregate shorthand must be fn:field:alias, got {expr!r}",
            )
        fn, name, inline_alias = segments
        if fn not in AGG_FNS:
            raise QueryError("BadAlias", f"unknown aggregation fn {fn!r}")
        if not FIELD_NAME_RE.match(inline_alias):
            raise QueryError("BadAlias", f"bad output alias {inline_alias!r}")
        if name == "*":
            if fn != "count":
                raise QueryError("BadAlias", f"'*' is only valid with count, got {fn!r}")
        else:
            f = catalog.get(name)
            if f is None or f.kind != "column":
                raise QueryError("UnknownField", f"unknown column field {name!r}")
            if fn not in f.aggregatable_with:
                raise QueryError(
                    "BadAlias", f"{fn!r} is not applicable to field {name!r}"
                )
        return SelectExpr(raw=raw, source=ParamAgg(fn, name), output_alias=alias or inline_alias)

    f = catalog.get(expr)
    if f is None:
        raise QueryError("UnknownField", f"unknown field {expr!r}")
    if f.kind != "computed":
        raise QueryError(
            "UnknownField",
            f"{expr!r} is a column field; reference it as col:{expr} or via an aggregate",
        )
    return SelectExpr(raw=raw, source=ComputedRef(expr), output_alias=alias or expr)


# --- filters and grouping ---------------------------------------------------

@dataclass(frozen=True)
class FilterClause:
    field: str
    op: str  # eq | in | gte | lt
    value: object

    def to_json(self) -> dict:
        value = list(self.value) if isinstance(self.value, tuple) else self.value
        return {"field": self.field, "op": self.op, "value": value}

    @classmethod
    def from_json(cls, obj: dict) -> "FilterClause":
        return cls(field=obj.get("field"), op=obj.get("op"), value=obj.get("value"))


@dataclass(frozen=True)
class TimeGrain:
    grain: Grain


@dataclass(frozen=True)
class Dimension:
    field: str


GroupByKey = Union[TimeGrain, Dimension]


def group_key_to_str(key: GroupByKey) -> str:
    return key.grain if isinstance(key, TimeGrain) else key.field


def group_key_from_str(text: str) -> GroupByKey:
    return TimeGrain(text) if text in GRAINS else Dimension(text)


@dataclass(frozen=True)
class OrderBy:
    alias: str
    dir: str = "desc"

    def to_json(self) -> dict:
        return {"alias": self.alias, "dir": self.dir}


@dataclass(frozen=True)
class DateSpec:
    """A date range as written, before validation; may be reversed or malformed."""

    start_date: str
    end_date: str
    tz: str = "UTC"


# --- the request -----------------------------------------------------------

@dataclass
class AnalyticsRequest:
    """A request as drafted; select/group_by entries may still be raw strings."""

    endpoint: str
    select: list  # of str | SelectExpr
    date_range: object  # DateSpec | DateRange | None
    targets: list = field(default_factory=list)
    filters: list = field(default_factory=list)  # of FilterClause | dict
    group_by: list = field(default_factory=list)  # of str | GroupByKey
    order_by: list = field(default_factory=list)  # of OrderBy | dict
    explanation: str = ""

    def to_json(self) -> dict:
        where: dict = {}
        rng = self.date_range
        if isinstance(rng, DateRange):
            where["date_range"] = rng.to_json()
        elif isinstance(rng, DateSpec):
            where["date_range"] = {
                "start_date": rng.start_date,
                "end_date": rng.end_date,
                "tz": rng.tz,
            }
        where["targets"] = list(self.targets)
        where["filters"] = [
            f.to_json() if isinstance(f, FilterClause) else dict(f) for f in self.filters
        ]
        return {
            "endpoint": self.endpoint,
            "request_body": {
                "select": [
                    s.canonical() if isinstance(s, SelectExpr) else str(s)
                    for s in self.select
                ],
                "where": where,
                "group_by": [
                    k if isinstance(k, str) else group_key_to_str(k) for k in self.group_by
                ],
                "order_by": [
                    o.to_json() if isinstance(o, OrderBy) else dict(o) for o in self.order_by
                ],
            },
            "explanation": self.explanation,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnalyticsRequest":
        body = obj.get("request_body") or {}
        where = body.get("where") or {}
        rng = where.get("date_range")
        date_range = None
        if isinstance(rng, dict):
            date_range = DateSpec(
                start_date=str(rng.get("start_date", "")),
                end_date=str(rng.get("end_date", "")),
                tz=str(rng.get("tz", "UTC")),
            )
        return cls(
            endpoint=str(obj.get("endpoint", "")),
            select=list(body.get("select") or []),
            date_range=date_range,
            targets=list(where.get("targets") or []),
            filters=list(where.get("filters") or []),
            group_by=list(body.get("group_by") or []),
            order_by=list(body.get("order_by") or []),
            explanation=str(obj.get("explanation", "")),
        )


@dataclass(frozen=True)
class ValidatedRequest:
    """Canonical, immutable form accepted by the execution layer."""

    endpoint: str
    select: tuple[SelectExpr, ...]
    date_range: DateRange
    targets: tuple[str, ...]
    filters: tuple[FilterClause, ...]
    group_by: tuple[GroupByKey, ...]
    order_by: tuple[OrderBy, ...]
    explanation: str = ""

    def output_aliases(self) -> list[str]:
        return [s.output_alias for s in self.select]

    def time_grain(self) -> Grain | None:
        for key in self.group_by:
            if isinstance(key, TimeGrain):
                return key.grain
        return None

    def dimensions(self) -> list[str]:
        return [k.field for k in self.group_by if isinstance(k, Dimension)]

    def as_request(self) -> AnalyticsRequest:
        return AnalyticsRequest(
            endpoint=self.endpoint,
            select=list(self.select),
            date_range=self.date_range,
            targets=list(self.targets),
            filters=list(self.filters),
            group_by=list(self.group_by),
            order_by=list(self.order_by),
            explanation=self.explanation,
        )

    def to_json(self) -> dict:
        return self.as_request().to_json()


def classify_endpoint(intent: "IntentFrame") -> str:
    """Route an intent to one of the four endpoints; total over well-formed frames.

    Rule order: explicit ranking -> leaderboard; any time-grain breakdown ->
    timeseries; a request for the records themselves -> records; otherwise
    aggregate_metrics.
    """
    if intent.ranking:
        return "leaderboard"
    if any(isinstance(k, TimeGrain) for k in intent.breakdown):
        return "timeseries"
    if "records" in intent.metrics:
        return "records"
    return "aggregate_metrics"


# --- validation -------------------------------------------------------------

def _validate_date_range(rng: object) -> DateRange:
    if isinstance(rng, DateRange):
        return rng
    if rng is None:
        raise QueryError("BadDateRange", "request has no date range")
    if isinstance(rng, DateSpec):
        try:
            start = date.fromisoformat(rng.start_date)
            end = date.fromisoformat(rng.end_date)
        except (TypeError, ValueError):
            raise QueryError(
                "BadDateRange",
                f"dates must be ISO YYYY-MM-DD, got {rng.start_date!r}..{rng.end_date!r}",
            ) from None
        if end <= start:
            raise QueryError(
                "BadDateRange",
                f"End date must be after start date, got [{rng.start_date}, {rng.end_date}]",
            )
        try:
            return DateRange(start, end, rng.tz)
        except InvalidExpr as exc:
            raise QueryError("BadDateRange", str(exc)) from None
    raise QueryError("BadDateRange", f"unrecognized date range {rng!r}")


def _is_scalar(value: object) -> bool:
    return isinstance(value, (str, int, float))


def _validate_filter(raw: object, catalog: Catalog) -> FilterClause:
    clause = raw if isinstance(raw, FilterClause) else FilterClause.from_json(raw) if isinstance(raw, dict) else None
    if clause is None:
        raise QueryError("BadAlias", f"malformed filter {raw!r}")
    if not isinstance(clause.field, str):
        raise QueryError("BadAlias", f"malformed filter field {clause.field!r}")
    f = catalog.get(clause.field)
    if f is None:
        raise QueryError("UnknownField", f"unknown filter field {clause.field!r}")
    if f.kind != "column":
        raise QueryError("UnknownField", f"filters apply to column fields, not {clause.field!r}")
    if clause.op not in FILTER_OPS:
        raise QueryError("BadAlias", f"unknown filter op {clause.op!r}")
    value = clause.value
    if clause.op == "in":
        if not isinstance(value, (list, tuple)) or len(value) == 0:
            raise QueryError("BadAlias", "'in' filter requires a non-empty list")
        if not all(_is_scalar(v) for v in value):
            raise QueryError("BadAlias", "'in' filter values must be scalars")
        return FilterClause(clause.field, "in", tuple(value))
    if not _is_scalar(value):
        raise QueryError("BadAlias", f"{clause.op!r} filter requires a scalar value")
    if clause.op in ("gte", "lt") and f.value_type not in ORDERED_VALUE_TYPES:
        raise QueryError(
            "BadAlias",
            f"{clause.op!r} requires an ordered field, {clause.field!r} is {f.value_type}",
        )
    return FilterClause(clause.field, clause.op, value)


def _validate_group_by(request: AnalyticsRequest, catalog: Catalog) -> tuple[GroupByKey, ...]:
    keys: list[GroupByKey] = []
    for raw in request.group_by:
        if isinstance(raw, (TimeGrain, Dimension)):
            key = raw
        elif isinstance(raw, str):
            key = group_key_from_str(raw.strip().lower())
        else:
            raise QueryError("BadGroupBy", f"malformed group key {raw!r}")
        if isinstance(key, TimeGrain):
            if key.grain not in GRAINS:
                raise QueryError("BadGroupBy", f"unknown time grain {key.grain!r}")
        else:
            f = catalog.get(key.field)
            if f is None:
                raise QueryError("BadGroupBy", f"unknown group-by field {key.field!r}")
            if f.kind != "column":
                raise QueryError("BadGroupBy", f"cannot group by computed field {key.field!r}")
            if f.value_type not in GROUPABLE_VALUE_TYPES:
                raise QueryError(
                    "BadGroupBy",
                    f"cannot group by {f.value_type} field {key.field!r}; use a time grain",
                )
        keys.append(key)

    grains = [k for k in keys if isinstance(k, TimeGrain)]
    if request.endpoint == "timeseries":
        if len(grains) != 1:
            raise QueryError(
                "BadGroupBy",
                f"timeseries requires exactly one time grain, got {len(grains)}",
            )
    elif grains:
        raise QueryError(
            "BadGroupBy", f"time grains are only valid on timeseries, not {request.endpoint}"
        )
    if request.endpoint in ("leaderboard", "records") and keys:
        raise QueryError("BadGroupBy", f"{request.endpoint} does not accept group_by")
    seen: set[GroupByKey] = set()
    for key in keys:
        if key in seen:
            raise QueryError("BadGroupBy", f"duplicate group key {group_key_to_str(key)!r}")
        seen.add(key)
    return tuple(keys)


def validate(
    request: AnalyticsRequest | ValidatedRequest, catalog: Catalog
) -> ValidatedRequest | ValidationError:
    """Check a request against the catalog; side-effect free.

    Returns a canonical ValidatedRequest, or the first ValidationError in
    the documented check order. Validating a ValidatedRequest is stable.
    """
    if isinstance(request, ValidatedRequest):
        request = request.as_request()
    try:
        if request.endpoint not in ENDPOINTS:
            raise QueryError("UnknownEndpoint", f"unknown endpoint {request.endpoint!r}")

        if not request.select:
            raise QueryError("EmptySelect", "select must name at least one expression")
        select: list[SelectExpr] = []
        for raw in request.select:
            if isinstance(raw, SelectExpr):
                expr = parse_select(raw.canonical(), catalog)
            else:
                expr = parse_select(raw, catalog)
            select.append(expr)
        aliases = [s.output_alias for s in select]
        dupes = {a for a in aliases if aliases.count(a) > 1}
        if dupes:
            raise QueryError("BadAlias", f"duplicate output aliases {sorted(dupes)}")

        date_range = _validate_date_range(request.date_range)

        targets: list[str] = []
        for t in request.targets:
            if not isinstance(t, str) or not t:
                raise QueryError("BadAlias", f"targets must be non-empty id strings, got {t!r}")
            targets.append(t)
        filters = tuple(_validate_filter(f, catalog) for f in request.filters)

        group_by = _validate_group_by(request, catalog)

        order_by: list[OrderBy] = []
        for raw in request.order_by:
            if isinstance(raw, OrderBy):
                ob = raw
            elif isinstance(raw, dict):
                ob = OrderBy(alias=raw.get("alias"), dir=raw.get("dir", "desc"))
            else:
                raise QueryError("DanglingOrderBy", f"malformed order_by entry {raw!r}")
            if ob.alias not in aliases:
                raise QueryError(
                    "DanglingOrderBy",
                    f"order_by alias {ob.alias!r} does not appear among select aliases",
                )
            if ob.dir not in ("asc", "desc"):
                raise QueryError("DanglingOrderBy", f"order direction must be asc|desc, got {ob.dir!r}")
            order_by.append(ob)

        return ValidatedRequest(
            endpoint=request.endpoint,
            select=tuple(select),
            date_range=date_range,
            targets=tuple(sorted(dict.fromkeys(targets))),
            filters=filters,
            group_by=group_by,
            order_by=tuple(order_by),
            explanation=str(request.explanation or ""),
        )
    except QueryError as exc:
        return exc.as_validation_error()
