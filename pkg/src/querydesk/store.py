"""Synthetic governed analytics backend.

Holds one tenant's interaction records plus the field catalog, and executes
validated requests with endpoint semantics, permission scoping, and
masking. The record schema is fixed; catalogs may only expose the columns
and computed metrics defined here, which is what makes gold answers
computable.

Computed-metric formulas (also recorded in the catalog descriptions):

* all_calls             = count(kind=call)
* handled_calls         = count(kind=call and handled)
* all_voicemails        = count(kind=voicemail)
* inbound_texts         = count(kind=text and direction=inbound)
* internal_meetings     = count(kind=meeting and direction=internal)
* all_digital_sessions  = count(kind=digital_session)
* deflected_sessions    = count(kind=digital_session and deflected)
* deflection_rate       = deflected_sessions / all_digital_sessions (null when no sessions)
* average_csat_score    = mean of non-null csat_score
* average_resolution_time = mean of non-null resolution_time_seconds
* avg_handle_time       = mean duration_seconds over handled calls
* survey_count          = count(csat_score present)
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, replace as dc_replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from .catalog import Catalog, FieldDef
from .dates import bucket, bucket_labels
from .query import (
    ColumnRef,
    ComputedRef,
    ParamAgg,
    SelectExpr,
    ValidatedRequest,
)
from .tables import MASK_SENTINEL, TabularResult
from .targets import Org, OrgNode, Principal

KINDS = ("call", "text", "voicemail", "meeting", "digital_session")
DIRECTIONS = ("inbound", "outbound", "internal")

RECORDS_CAP = 500  # raw-records responses are bounded, newest first

# Which record attributes may be present, by interaction kind.
OPTIONAL_FIELD_KINDS: dict[str, frozenset[str]] = {
    "disposition": frozenset({"call"}),
    "channel": frozenset({"digital_session"}),
    "csat_score": frozenset({"call", "digital_session"}),
    "ai_talk_time_pct": frozenset({"call", "meeting"}),
    "resolution_time_seconds": frozenset({"digital_session"}),
    "deflected": frozenset({"digital_session"}),
}

# Catalog column name -> record attribute ("target"/"target_id" resolve
# through the org).
COLUMN_ATTRS: dict[str, str] = {
    "target_id": "target_id",
    "target": "target",
    "kind": "kind",
    "direction": "direction",
    "duration": "duration_seconds",
    "disposition": "disposition",
    "channel": "channel",
    "csat_score": "csat_score",
    "percent_ai_talk_time": "ai_talk_time_pct",
    "resolution_time": "resolution_time_seconds",
    "occurred_at": "occurred_at",
}


class ParseError(ValueError):
    """Malformed bundle file."""


class IntegrityError(ValueError):
    """Bundle violates a dataset invariant (dangling ids, unknown fields)."""


class PermissionDenied(Exception):
    """A requested target is outside the principal's permitted set."""


class EndpointError(Exception):
    """Internal execution failure; `retriable` marks transient ones."""

    def __init__(self, message: str, retriable: bool = False):
        super().__init__(message)
        self.retriable = retriable


@dataclass(frozen=True)
class InteractionRecord:
    record_id: str
    tenant_id: str
    target_id: str
    occurred_at: datetime
    kind: str
    direction: str
    duration_seconds: float
    handled: bool
    disposition: str | None = None
    channel: str | None = None
    csat_score: float | None = None
    ai_talk_time_pct: float | None = None
    resolution_time_seconds: float | None = None
    deflected: bool | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"bad kind {self.kind!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"bad direction {self.direction!r}")
        if self.occurred_at.tzinfo is None:
            raise ValueError("occurred_at must be timezone-aware")
        if self.duration_seconds < 0:
            raise ValueError("duration_seconds must be non-negative")
        if self.csat_score is not None and not 1 <= self.csat_score <= 5:
            raise ValueError("csat_score must be in [1, 5]")
        if self.ai_talk_time_pct is not None and not 0 <= self.ai_talk_time_pct <= 100:
            raise ValueError("ai_talk_time_pct must be in [0, 100]")
        if self.resolution_time_seconds is not None and self.resolution_time_seconds < 0:
            raise ValueError("resolution_time_seconds must be non-negative")
        for attr, kinds in OPTIONAL_FIELD_KINDS.items():
            if getattr(self, attr) is not None and self.kind not in kinds:
                raise ValueError(f"{attr} is not applicable to kind {self.kind!r}")

    def to_json(self) -> dict:
        out = {
            "record_id": self.record_id,
            "tenant_id": self.tenant_id,
            "target_id": self.target_id,
            "occurred_at": self.occurred_at.isoformat(),
            "kind": self.kind,
            "direction": self.direction,
            "duration_seconds": self.duration_seconds,
            "handled": self.handled,
        }
        for attr in OPTIONAL_FIELD_KINDS:
            value = getattr(self, attr)
            if value is not None:
                out[attr] = value
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "InteractionRecord":
        try:
            occurred = datetime.fromisoformat(obj["occurred_at"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad occurred_at in record {obj.get('record_id')!r}") from exc
        return cls(
            record_id=obj["record_id"],
            tenant_id=obj["tenant_id"],
            target_id=obj["target_id"],
            occurred_at=occurred,
            kind=obj["kind"],
            direction=obj["direction"],
            duration_seconds=float(obj["duration_seconds"]),
            handled=bool(obj["handled"]),
            disposition=obj.get("disposition"),
            channel=obj.get("channel"),
            csat_score=obj.get("csat_score"),
            ai_talk_time_pct=obj.get("ai_talk_time_pct"),
            resolution_time_seconds=obj.get("resolution_time_seconds"),
            deflected=obj.get("deflected"),
        )


# --- computed metrics --------------------------------------------------------

def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


@dataclass(frozen=True)
class ComputedMetric:
    name: str
    value_type: str
    description: str
    fn: Callable[[list[InteractionRecord]], float | None]


def _count_metric(name: str, description: str, pred) -> ComputedMetric:
    return ComputedMetric(name, "number", description, lambda recs: sum(1 for r in recs if pred(r)))


def _deflection_rate(recs: list[InteractionRecord]) -> float | None:
    sessions = [r for r in recs if r.kind == "digital_session"]
    if not sessions:
        return None
    return sum(1 for r in sessions if r.deflected) / len(sessions)


COMPUTED_METRICS: dict[str, ComputedMetric] = {
    m.name: m
    for m in [
        _count_metric("all_calls", "count of call interactions", lambda r: r.kind == "call"),
        _count_metric(
            "handled_calls",
            "count of calls marked handled",
            lambda r: r.kind == "call" and r.handled,
        ),
        _count_metric("all_voicemails", "count of voicemails", lambda r: r.kind == "voicemail"),
        _count_metric(
            "inbound_texts",
            "count of inbound text interactions",
            lambda r: r.kind == "text" and r.direction == "inbound",
        ),
        _count_metric(
            "internal_meetings",
            "count of internal meetings",
            lambda r: r.kind == "meeting" and r.direction == "internal",
        ),
        _count_metric(
            "all_digital_sessions",
            "count of digital sessions",
            lambda r: r.kind == "digital_session",
        ),
        _count_metric(
            "deflected_sessions",
            "count of digital sessions resolved without an agent",
            lambda r: r.kind == "digital_session" and bool(r.deflected),
        ),
        ComputedMetric(
            "deflection_rate",
            "number",
            "deflected_sessions / all_digital_sessions, in [0, 1]; null with no sessions",
            _deflection_rate,
        ),
        ComputedMetric(
            "average_csat_score",
            "number",
            "mean of non-null csat_score",
            lambda recs: _mean([r.csat_score for r in recs if r.csat_score is not None]),
        ),
        ComputedMetric(
            "average_resolution_time",
            "duration_seconds",
            "mean of non-null resolution_time_seconds",
            lambda recs: _mean(
                [r.resolution_time_seconds for r in recs if r.resolution_time_seconds is not None]
            ),
        ),
        ComputedMetric(
            "avg_handle_time",
            "duration_seconds",
            "mean duration_seconds over handled calls",
            lambda recs: _mean(
                [r.duration_seconds for r in recs if r.kind == "call" and r.handled]
            ),
        ),
        ComputedMetric(
            "survey_count",
            "number",
            "count of interactions with a csat_score response",
            lambda recs: sum(1 for r in recs if r.csat_score is not None),
        ),
    ]
}


def standard_catalog() -> Catalog:
    """The full column + computed-metric vocabulary of the synthetic backend."""
    count_only = frozenset({"count"})
    columns = [
        FieldDef("target_id", "column", "string", count_only, False,
                 "id of the organizational unit the interaction belongs to"),
        FieldDef("target", "column", "string", count_only, True,
                 "display name of the organizational unit"),
        FieldDef("kind", "column", "string", count_only, False,
                 "interaction kind: call, text, voicemail, meeting, digital_session"),
        FieldDef("direction", "column", "string", count_only, False,
                 "inbound, outbound, or internal"),
        FieldDef("duration", "column", "duration_seconds",
                 frozenset({"avg", "sum", "min", "max", "count"}), False,
                 "interaction length in seconds"),
        FieldDef("disposition", "column", "string", count_only, False,
                 "call outcome label, e.g. 'Sale Closed'"),
        FieldDef("channel", "column", "string", count_only, False,
                 "digital session channel, e.g. web_chat"),
        FieldDef("csat_score", "column", "number",
                 frozenset({"avg", "min", "max", "count"}), True,
                 "post-interaction satisfaction survey score, 1-5"),
        FieldDef("percent_ai_talk_time", "column", "percentage",
                 frozenset({"avg", "min", "max", "count"}), False,
                 "share of talk time carried by the assistant, 0-100"),
        FieldDef("resolution_time", "column", "duration_seconds",
                 frozenset({"avg", "sum", "min", "max", "count"}), False,
                 "seconds until a digital session was resolved"),
        FieldDef("occurred_at", "column", "timestamp",
                 frozenset({"min", "max", "count"}), False,
                 "UTC instant the interaction happened"),
    ]
    computed = [
        FieldDef(m.name, "computed", m.value_type, frozenset(), False, m.description)
        for m in COMPUTED_METRICS.values()
    ]
    return Catalog(columns + computed)


# --- dataset -------------------------------------------------------------

@dataclass
class Dataset:
    tenant_id: str
    catalog: Catalog
    records: list[InteractionRecord]
    org: Org

    def __post_init__(self) -> None:
        if self.org.tenant_id and self.org.tenant_id != self.tenant_id:
            raise IntegrityError("org tenant does not match dataset tenant")
        for f in self.catalog.columns():
            if f.name not in COLUMN_ATTRS:
                raise IntegrityError(f"catalog column {f.name!r} has no backing record attribute")
        for f in self.catalog.computed():
            if f.name not in COMPUTED_METRICS:
                raise IntegrityError(f"computed field {f.name!r} has no formula definition")
        for record in self.records:
            if record.tenant_id != self.tenant_id:
                raise IntegrityError(f"record {record.record_id!r} belongs to another tenant")
            if record.target_id not in self.org:
                raise IntegrityError(
                    f"record {record.record_id!r} references unknown target {record.target_id!r}"
                )


def load_dataset(path: str | Path) -> Dataset:
    """Load and fully validate a bundle directory.

    A bundle holds catalog.json (FieldDef array), org.json (OrgNode array),
    and records.jsonl (one record per line).
    """
    root = Path(path)
    if not root.is_dir():
        raise ParseError(f"bundle directory not found: {root}")

    def read_json(name: str):
        p = root / name
        if not p.is_file():
            raise ParseError(f"missing bundle file {name}")
        try:
            return json.loads(p.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{name} is not valid JSON: {exc}") from exc

    try:
        catalog = Catalog.from_json(read_json("catalog.json"))
        org = Org.from_json(read_json("org.json"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc)) from exc

    records: list[InteractionRecord] = []
    records_path = root / "records.jsonl"
    if not records_path.is_file():
        raise ParseError("missing bundle file records.jsonl")
    for lineno, line in enumerate(records_path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(InteractionRecord.from_json(obj))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise ParseError(f"records.jsonl line {lineno}: {exc}") from exc
            raise ParseError(f"records.jsonl line {lineno}: {exc}") from exc

    tenant = org.tenant_id or (records[0].tenant_id if records else "unknown")
    return Dataset(tenant_id=tenant, catalog=catalog, records=records, org=org)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Serialize a bundle; output is byte-stable for identical datasets."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "catalog.json").write_text(
        json.dumps(dataset.catalog.to_json(), indent=2, ensure_ascii=False) + "\n", "utf-8"
    )
    (root / "org.json").write_text(
        json.dumps(dataset.org.to_json(), indent=2, ensure_ascii=False) + "\n", "utf-8"
    )
    lines = [json.dumps(r.to_json(), ensure_ascii=False, separators=(",", ":")) for r in dataset.records]
    (root / "records.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")


# --- deterministic generator -----------------------------------------------

DEFAULT_TENANT = "acme"

# Documented kind distribution; counts are floor(p*n) with the remainder
# assigned in this order, so the implied count is exact, not stochastic.
KIND_DISTRIBUTION = [
    ("call", 0.40),
    ("text", 0.20),
    ("meeting", 0.15),
    ("digital_session", 0.15),
    ("voicemail", 0.10),
]

# Record timestamps cycle through months in this order so even tiny
# datasets span two calendar quarters.
_MONTH_ORDER = (1, 4, 2, 5, 3, 6)
_DATA_YEAR = 2025
_LAST_GENERATED_DAY = (6, 14)  # generation stops before the fixed session clock

DISPOSITIONS = ("Sale Closed", "Resolved", "Escalated", "No Answer", "Follow-up Required")
CHANNELS = ("web_chat", "mobile_app", "email", "social")


def default_org(tenant_id: str = DEFAULT_TENANT) -> Org:
    nodes = [
        OrgNode("t-01", tenant_id, "Primary Office", "office", None, ("HQ",)),
        OrgNode("t-02", tenant_id, "Support", "call_center", "t-01", ("Main Support",)),
        OrgNode("t-03", tenant_id, "Seattle Support", "agent_group", "t-02"),
        OrgNode("t-04", tenant_id, "Portland Support", "agent_group", "t-02"),
        OrgNode("t-05", tenant_id, "Customer Care", "team", "t-01"),
        OrgNode("t-06", tenant_id, "Services", "department", "t-01"),
        OrgNode("t-07", tenant_id, "Digital Services", "team", "t-06"),
        OrgNode("t-08", tenant_id, "Sales", "department", "t-01"),
        OrgNode("t-09", tenant_id, "Inside Sales", "team", "t-08"),
        OrgNode("t-10", tenant_id, "Secondary Office", "office", None),
        OrgNode("t-11", tenant_id, "Field Operations", "department", "t-10"),
        OrgNode("t-12", tenant_id, "East Field Team", "agent_group", "t-11"),
    ]
    return Org(nodes)


def kind_counts(n_records: int) -> dict[str, int]:
    """Exact per-kind allocation implied by KIND_DISTRIBUTION."""
    counts = {kind: int(p * n_records) for kind, p in KIND_DISTRIBUTION}
    remainder = n_records - sum(counts.values())
    for kind, _ in KIND_DISTRIBUTION:
        if remainder == 0:
            break
        counts[kind] += 1
        remainder -= 1
    return counts


def generate_dataset(seed: int, n_records: int, org_shape: dict | None = None) -> Dataset:
    """Deterministic synthetic dataset; identical (seed, n, shape) means identical bytes."""
    if n_records < 0:
        raise ValueError("n_records must be >= 0")
    shape = org_shape or {}
    tenant = shape.get("tenant_id", DEFAULT_TENANT)
    org = default_org(tenant)
    rng = random.Random(seed)
    leaves = sorted(org.leaves())

    kinds: list[str] = []
    for kind, count in kind_counts(n_records).items():
        kinds.extend([kind] * count)
    rng.shuffle(kinds)

    records: list[InteractionRecord] = []
    for i, kind in enumerate(kinds):
        month = _MONTH_ORDER[i % len(_MONTH_ORDER)]
        last_day = 28 if month != _LAST_GENERATED_DAY[0] else _LAST_GENERATED_DAY[1]
        occurred = datetime(
            _DATA_YEAR, month, rng.randint(1, last_day),
            rng.randint(0, 23), rng.randint(0, 59), rng.randint(0, 59),
            tzinfo=timezone.utc,
        )
        target = rng.choice(leaves)
        direction = "internal" if kind == "meeting" and rng.random() < 0.8 else (
            "inbound" if rng.random() < 0.65 else "outbound"
        )
        duration = {
            "call": rng.uniform(30, 1800),
            "text": 0.0,
            "voicemail": rng.uniform(5, 120),
            "meeting": rng.uniform(600, 3600),
            "digital_session": rng.uniform(60, 1200),
        }[kind]
        handled = rng.random() < (0.8 if kind == "call" else 0.5)
        disposition = rng.choice(DISPOSITIONS) if kind == "call" and rng.random() < 0.7 else None
        channel = rng.choice(CHANNELS) if kind == "digital_session" else None
        csat = (
            float(rng.randint(1, 5))
            if kind in ("call", "digital_session") and rng.random() < 0.4
            else None
        )
        ai_pct = (
            round(rng.uniform(0, 100), 1)
            if kind in ("call", "meeting") and rng.random() < 0.6
            else None
        )
        resolution = round(rng.uniform(120, 7200), 1) if kind == "digital_session" else None
        deflected = rng.random() < 0.35 if kind == "digital_session" else None
        records.append(
            InteractionRecord(
                record_id=f"pending-{i}",
                tenant_id=tenant,
                target_id=target,
                occurred_at=occurred,
                kind=kind,
                direction=direction,
                duration_seconds=round(duration, 1),
                handled=handled,
                disposition=disposition,
                channel=channel,
                csat_score=csat,
                ai_talk_time_pct=ai_pct,
                resolution_time_seconds=resolution,
                deflected=deflected,
            )
        )

    records.sort(key=lambda r: (r.occurred_at, r.record_id))
    records = [
        dc_replace(r, record_id=f"r-{i:05d}") for i, r in enumerate(records)
    ]
    return Dataset(tenant_id=tenant, catalog=standard_catalog(), records=records, org=org)


# --- execution ----------------------------------------------------------------

_VALUE_REVEALING_FNS = frozenset({"avg", "sum", "min", "max"})


def _column_value(record: InteractionRecord, field_name: str, org: Org):
    if field_name == "target":
        node = org.get(record.target_id)
        return node.name if node else record.target_id
    attr = COLUMN_ATTRS.get(field_name)
    if attr is None:
        raise EndpointError(f"column {field_name!r} has no backing attribute")
    return getattr(record, attr)


def _cell(value):
    if isinstance(value, datetime):
        return value.isoformat()
    return value


def _filter_matches(record: InteractionRecord, clause, org: Org) -> bool:
    cell = _column_value(record, clause.field, org)
    if cell is None:
        return False
    value = clause.value
    if isinstance(cell, datetime):
        try:
            if clause.op == "in":
                return cell.isoformat() in [str(v) for v in value]
            other = datetime.fromisoformat(str(value))
        except ValueError:
            return False
        if other.tzinfo is None:
            other = other.replace(tzinfo=timezone.utc)
        if clause.op == "eq":
            return cell == other
        return cell >= other if clause.op == "gte" else cell < other
    if clause.op == "eq":
        return cell == value
    if clause.op == "in":
        return cell in value
    try:
        cell_num, value_num = float(cell), float(value)
    except (TypeError, ValueError):
        return False
    return cell_num >= value_num if clause.op == "gte" else cell_num < value_num


def _select_value(expr: SelectExpr, records: list[InteractionRecord], org: Org):
    src = expr.source
    if isinstance(src, ComputedRef):
        return COMPUTED_METRICS[src.name].fn(records)
    if isinstance(src, ParamAgg):
        if src.fn == "count":
            if src.field_name == "*":
                return len(records)
            return sum(
                1 for r in records if _column_value(r, src.field_name, org) is not None
            )
        values = [
            v for r in records if (v := _column_value(r, src.field_name, org)) is not None
        ]
        if src.fn == "sum":
            return float(sum(values)) if not any(isinstance(v, datetime) for v in values) else None
        if not values:
            return None
        if src.fn == "avg":
            return float(sum(values)) / len(values)
        if src.fn == "min":
            return _cell(min(values))
        return _cell(max(values))
    # Raw column in an aggregate context: the group's common value (always
    # defined for singleton record groups and grouped dimensions), else null.
    distinct = {_cell(_column_value(r, src.field_name, org)) for r in records}
    if len(distinct) == 1:
        return next(iter(distinct))
    return None


def _select_value_type(expr: SelectExpr, catalog: Catalog) -> str:
    src = expr.source
    if isinstance(src, ComputedRef):
        return catalog.get(src.name).value_type
    if isinstance(src, ParamAgg):
        if src.fn == "count":
            return "number"
        return catalog.get(src.field_name).value_type
    return catalog.get(src.field_name).value_type


def _zero_value(expr: SelectExpr) -> object:
    """Empty-bucket value: counts are 0, everything else null."""
    src = expr.source
    if isinstance(src, ParamAgg):
        if src.fn == "count":
            return 0
        return 0.0 if src.fn == "sum" else None
    if isinstance(src, ComputedRef):
        metric = COMPUTED_METRICS[src.name]
        return metric.fn([])
    return None


class AnalyticsStore:
    """Executes validated requests against an immutable dataset.

    The dataset is swapped wholesale on reload; execution never mutates it,
    so concurrent calls are safe.
    """

    def __init__(self, dataset: Dataset):
        self._dataset = dataset
        self._lock = threading.Lock()
        self._request_seq = 0

    @property
    def dataset(self) -> Dataset:
        return self._dataset

    @property
    def catalog(self) -> Catalog:
        return self._dataset.catalog

    @property
    def org(self) -> Org:
        return self._dataset.org

    def reload(self, dataset: Dataset) -> None:
        with self._lock:
            self._dataset = dataset

    def _next_request_id(self) -> str:
        with self._lock:
            self._request_seq += 1
            return f"q-{self._request_seq:06d}"

    def execute(self, request: ValidatedRequest, principal: Principal) -> TabularResult:
        """Run one validated request under the principal's permissions.

        Raises PermissionDenied when any requested target falls outside the
        permitted set (the request is refused whole, never narrowed).
        """
        dataset = self._dataset
        org = dataset.org
        if principal.tenant_id != dataset.tenant_id:
            raise PermissionDenied("principal belongs to a different tenant")
        if not request.targets:
            raise EndpointError("request names no targets", retriable=False)
        for target in request.targets:
            if target not in org or target not in principal.permitted_target_ids:
                raise PermissionDenied(f"target {target!r} is not permitted")

        scope: set[str] = set()
        for target in request.targets:
            scope |= org.descendants(target)
        scope &= principal.permitted_target_ids

        start = request.date_range.start_instant()
        end = request.date_range.end_instant()
        matching = [
            r
            for r in dataset.records
            if r.target_id in scope
            and start <= r.occurred_at < end
            and all(_filter_matches(r, f, org) for f in request.filters)
        ]

        if request.endpoint == "aggregate_metrics":
            result = self._aggregate(request, matching, org)
        elif request.endpoint == "timeseries":
            result = self._timeseries(request, matching, org)
        elif request.endpoint == "leaderboard":
            result = self._leaderboard(request, matching, org, principal)
        elif request.endpoint == "records":
            result = self._records(request, matching, org)
        else:  # unreachable after validation
            raise EndpointError(f"unknown endpoint {request.endpoint!r}")

        result.provenance["request_id"] = self._next_request_id()
        result.provenance["scope"] = ", ".join(
            org.get(t).name if org.get(t) else t for t in request.targets
        )
        rng = request.date_range
        result.provenance["window"] = f"[{rng.start_date}, {rng.end_date})"
        return apply_masking(result, dataset.catalog, principal)

    def _select_columns(self, request: ValidatedRequest) -> list[dict]:
        return [
            {"name": s.output_alias, "value_type": _select_value_type(s, self.catalog)}
            for s in request.select
        ]

    def _select_sources(self, request: ValidatedRequest) -> dict[str, str]:
        return {s.output_alias: s.source_key() for s in request.select}

    def _aggregate(self, request, matching, org) -> TabularResult:
        dims = request.dimensions()
        schema = [
            {"name": d, "value_type": self.catalog.get(d).value_type} for d in dims
        ] + self._select_columns(request)
        rows: list[list] = []
        if dims:
            groups: dict[tuple, list[InteractionRecord]] = {}
            for record in matching:
                key = tuple(_cell(_column_value(record, d, org)) for d in dims)
                groups.setdefault(key, []).append(record)
            for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
                recs = groups[key]
                rows.append(list(key) + [_select_value(s, recs, org) for s in request.select])
        else:
            rows.append([_select_value(s, matching, org) for s in request.select])
        return TabularResult(
            schema=schema,
            rows=rows,
            provenance={
                "endpoint": request.endpoint,
                "select_sources": self._select_sources(request),
            },
        )

    def _timeseries(self, request, matching, org) -> TabularResult:
        grain = request.time_grain()
        dims = request.dimensions()
        labels = bucket_labels(request.date_range, grain)
        schema = (
            [{"name": grain, "value_type": "string"}]
            + [{"name": d, "value_type": self.catalog.get(d).value_type} for d in dims]
            + self._select_columns(request)
        )
        tz = request.date_range.tz
        groups: dict[tuple, list[InteractionRecord]] = {}
        combos: set[tuple] = set()
        for record in matching:
            label = bucket(record.occurred_at, grain, tz)
            combo = tuple(_cell(_column_value(record, d, org)) for d in dims)
            combos.add(combo)
            groups.setdefault((label, combo), []).append(record)
        if not dims:
            combos = {()}
        rows: list[list] = []
        for label in labels:
            for combo in sorted(combos, key=lambda c: tuple(str(v) for v in c)):
                recs = groups.get((label, combo), [])
                if recs:
                    values = [_select_value(s, recs, org) for s in request.select]
                else:
                    values = [_zero_value(s) for s in request.select]
                rows.append([label, *combo, *values])
        return TabularResult(
            schema=schema,
            rows=rows,
            provenance={
                "endpoint": request.endpoint,
                "select_sources": self._select_sources(request),
                "grain": grain,
            },
        )

    def _leaderboard(self, request, matching, org, principal) -> TabularResult:
        schema = [
            {"name": "target_id", "value_type": "string"},
            {"name": "target", "value_type": "string"},
        ] + self._select_columns(request)
        per_target: list[tuple[str, str, list]] = []
        for target in request.targets:
            subtree = org.descendants(target) & principal.permitted_target_ids
            recs = [r for r in matching if r.target_id in subtree]
            node = org.get(target)
            per_target.append(
                (target, node.name if node else target,
                 [_select_value(s, recs, org) for s in request.select])
            )

        aliases = request.output_aliases()
        if request.order_by:
            order = request.order_by[0]
            idx = aliases.index(order.alias)
            descending = order.dir == "desc"
        else:
            idx = next(
                (i for i, s in enumerate(request.select)
                 if not isinstance(s.source, ColumnRef)),
                0,
            )
            descending = True

        def sort_key(entry):
            value = entry[2][idx]
            missing = value is None
            numeric = float(value) if isinstance(value, (int, float)) else 0.0
            # None sorts last regardless of direction; ties break by name asc.
            return (missing, -numeric if descending else numeric, entry[1])

        per_target.sort(key=sort_key)
        rows = [[tid, name, *values] for tid, name, values in per_target]
        return TabularResult(
            schema=schema,
            rows=rows,
            provenance={
                "endpoint": request.endpoint,
                "select_sources": self._select_sources(request),
            },
        )

    def _records(self, request, matching, org) -> TabularResult:
        schema = self._select_columns(request)
        ordered = sorted(matching, key=lambda r: (r.occurred_at, r.record_id), reverse=True)
        truncated = len(ordered) > RECORDS_CAP
        ordered = ordered[:RECORDS_CAP]
        rows = [
            [_select_value(s, [record], org) for s in request.select] for record in ordered
        ]
        return TabularResult(
            schema=schema,
            rows=rows,
            provenance={
                "endpoint": request.endpoint,
                "select_sources": self._select_sources(request),
                "truncated": truncated,
            },
        )


def _masked_column_names(result: TabularResult, catalog: Catalog) -> set[str]:
    sources = result.provenance.get("select_sources") or {}
    masked: set[str] = set()
    for col in result.schema:
        name = col["name"]
        source = sources.get(name)
        if source is None:
            # Group-key or synthesized column; masked iff the field itself is.
            f = catalog.get(name)
            if f is not None and f.maskable:
                masked.add(name)
            continue
        if source.startswith("col:"):
            f = catalog.get(source[4:])
            if f is not None and f.maskable:
                masked.add(name)
        elif ":" in source:
            fn, field_name = source.split(":", 1)
            f = catalog.get(field_name)
            if f is not None and f.maskable and fn in _VALUE_REVEALING_FNS:
                masked.add(name)
        # Computed metrics are curated aggregates and stay unmasked.
    return masked


def apply_masking(result: TabularResult, catalog: Catalog, principal: Principal) -> TabularResult:
    """Replace maskable values with the sentinel for principals lacking `unmasked`.

    Idempotent: masking an already-masked result changes nothing.
    """
    if principal.sees_unmasked:
        return result
    masked = _masked_column_names(result, catalog)
    if not masked:
        return result
    indices = [i for i, col in enumerate(result.schema) if col["name"] in masked]
    numeric = {
        i: result.schema[i]["value_type"] in ("number", "duration_seconds", "percentage")
        for i in indices
    }
    rows = []
    for row in result.rows:
        new_row = list(row)
        for i in indices:
            new_row[i] = None if numeric[i] else MASK_SENTINEL
        rows.append(new_row)
    return TabularResult(
        schema=result.schema,
        rows=rows,
        provenance=result.provenance,
        masked_columns=result.masked_columns | masked,
    )
