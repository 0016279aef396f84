"""End-to-end turn handling: Parse -> Targets -> Query -> Viz -> Done.

Each stage appends an audit entry; failures become structured responses,
never exceptions. One conversational flow may ask the user at most one
disambiguation question, query drafting gets at most two attempts (tier-1
programmatic fixes never consume an attempt's redraft), and permission
errors are terminal immediately.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .dates import DateRange, InvalidExpr, TrailingWindow, resolve
from .planner.base import DraftError, SessionHint, UninterpretableIntent
from .planner.frames import IntentFrame
from .planner.guardrails import REFUSAL_TEXT, apply_guardrails, scan_outbound
from .query import AnalyticsRequest, DateSpec, ValidationError, validate
from .store import AnalyticsStore, EndpointError, PermissionDenied
from .tables import TabularResult
from .targets import Ambiguous, Denied, Resolved, check_permission, resolve_targets
from .viz import (
    ChannelError,
    ChartConfig,
    Decline,
    MaskingPolicy,
    PseudonymTable,
    apply_chart_masking,
    build_chart_config,
    select_chart_type,
)

DEFAULT_TZ = "America/Los_Angeles"
DEFAULT_SESSION_TTL_SECONDS = 30 * 60
MAX_QUERY_ATTEMPTS = 2
DEFAULT_WINDOW = TrailingWindow(30, "days")

STAGES = ("Parse", "Targets", "Query", "Viz", "Done")
EVENTS = ("ok", "validation_error", "exec_error", "retry", "clarify", "refuse", "denied")

TARGET_PROBLEM_TEXT = (
    "I couldn't find an organizational unit you have access to by that name."
)
UNINTERPRETABLE_TEXT = (
    "I couldn't read an analytics question out of that. Try naming a metric, "
    "a team, and a time range."
)
KB_STUB_TEXT = "Knowledge base search is not configured in this deployment."
GIVE_UP_TEXT = (
    "I tried twice but couldn't build a working query for that. "
    "Would you like me to try a different approach?"
)
PERMISSION_TEXT = "That request covers targets outside your permissions, so I can't run it."
INTERNAL_ERROR_TEXT = "Something went wrong preparing that answer, so I'm withholding it."

_KB_MARKERS = ("how do i", "documentation", "knowledge base", "help article", "user guide")


@dataclass
class AuditEntry:
    timestamp: str
    stage: str
    event: str
    detail: str  # kinds, counts, and ids only; never record-level values

    def to_json(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "stage": self.stage,
            "event": self.event,
            "detail": self.detail,
        }


@dataclass
class AgentResponse:
    text: str
    status: str  # answered | needs_clarification | refused | failed
    table: TabularResult | None = None
    chart: ChartConfig | None = None
    clarification: dict | None = None

    def __post_init__(self) -> None:
        if (self.status == "needs_clarification") != (self.clarification is not None):
            raise ValueError("clarification present iff status is needs_clarification")
        if self.status != "answered" and self.table is not None:
            raise ValueError("only answered responses carry tables")

    def to_json(self) -> dict:
        out: dict = {"text": self.text, "status": self.status}
        if self.table is not None:
            out["table"] = self.table.to_json()
        if self.chart is not None:
            out["chart"] = self.chart.to_json()
        if self.clarification is not None:
            out["clarification"] = self.clarification
        return out


@dataclass
class SessionState:
    session_id: str
    principal: object
    tz: str = DEFAULT_TZ
    resolved_targets: list[str] = field(default_factory=list)
    time_window: DateRange | None = None
    turn_history: list[dict] = field(default_factory=list)
    clarification_count_this_flow: int = 0
    audit: list[AuditEntry] = field(default_factory=list)
    last_metrics: list[str] = field(default_factory=list)
    pending_clarification: dict | None = None
    pseudonyms: PseudonymTable = field(default_factory=PseudonymTable)
    last_request: object | None = None  # the ValidatedRequest behind the last answer
    last_touched: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class InMemorySessionStore:
    """Default session store with idle-TTL eviction."""

    def __init__(self, ttl_seconds: float = DEFAULT_SESSION_TTL_SECONDS, clock=time.monotonic):
        self._ttl = ttl_seconds
        self._clock = clock
        self._sessions: dict[str, SessionState] = {}
        self._lock = threading.Lock()

    def get_or_create(self, session_id: str, principal, tz: str = DEFAULT_TZ) -> SessionState:
        now = self._clock()
        with self._lock:
            for sid in [s for s, st in self._sessions.items() if now - st.last_touched > self._ttl]:
                del self._sessions[sid]
            session = self._sessions.get(session_id)
            if session is None or session.principal.user_id != principal.user_id:
                session = SessionState(session_id=session_id, principal=principal, tz=tz)
                self._sessions[session_id] = session
            session.last_touched = now
            return session

    def get(self, session_id: str) -> SessionState | None:
        with self._lock:
            return self._sessions.get(session_id)


class FileSessionStore(InMemorySessionStore):
    """Session store that snapshots durable fields to one JSON file per session.

    Audit history and pseudonyms survive restarts; locks do not span
    processes, so one service instance owns a directory.
    """

    def __init__(self, root: str | Path, ttl_seconds: float = DEFAULT_SESSION_TTL_SECONDS,
                 clock=time.monotonic):
        super().__init__(ttl_seconds=ttl_seconds, clock=clock)
        self._root = Path(root)
        self._root.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in session_id)
        return self._root / f"{safe}.json"

    def get_or_create(self, session_id: str, principal, tz: str = DEFAULT_TZ) -> SessionState:
        session = super().get_or_create(session_id, principal, tz)
        path = self._path(session_id)
        if not session.turn_history and path.is_file():
            snapshot = json.loads(path.read_text("utf-8"))
            session.resolved_targets = list(snapshot.get("resolved_targets", []))
            window = snapshot.get("time_window")
            session.time_window = DateRange.from_json(window) if window else None
            session.last_metrics = list(snapshot.get("last_metrics", []))
            session.turn_history = list(snapshot.get("turn_history", []))
            for raw in snapshot.get("audit", []):
                session.audit.append(AuditEntry(**raw))
            for value, label in snapshot.get("pseudonyms", {}).items():
                session.pseudonyms._mapping[value] = label
        return session

    def persist(self, session: SessionState) -> None:
        snapshot = {
            "resolved_targets": session.resolved_targets,
            "time_window": session.time_window.to_json() if session.time_window else None,
            "last_metrics": session.last_metrics,
            "turn_history": session.turn_history,
            "audit": [entry.to_json() for entry in session.audit],
            "pseudonyms": session.pseudonyms.known(),
        }
        self._path(session.session_id).write_text(
            json.dumps(snapshot, ensure_ascii=False, indent=2), "utf-8"
        )


def _format_value(value) -> str:
    if value is None:
        return "no data"
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:,.2f}".rstrip("0").rstrip(".") if value % 1 else f"{value:,.0f}"
    if isinstance(value, int):
        return f"{value:,}"
    return str(value)


def _prettify(name: str) -> str:
    return name.replace("_", " ")


def synthesize_response(result: TabularResult, frame: IntentFrame) -> str:
    """Deterministic text summary: metric, scope, window, headline numbers.

    Never embeds raw table or chart JSON, and never prints values hidden by
    masking (masked cells arrive as sentinels upstream).
    """
    sources = result.provenance.get("select_sources") or {}
    metric_cols = [c["name"] for c in result.schema if c["name"] in sources]
    metric = _prettify(metric_cols[0]) if metric_cols else "result"
    masked = bool(result.masked_columns)
    scope = result.provenance.get("scope", "")
    if masked and "target" in result.masked_columns:
        n_scope = scope.count(",") + 1 if scope else 0
        scope = f"{n_scope} selected group(s)" if n_scope else "your permitted groups"
    window = result.provenance.get("window", "")
    endpoint = result.provenance.get("endpoint", "")

    parts: list[str]
    if endpoint == "records":
        parts = [f"Returned {len(result.rows)} records for {scope} in {window}, newest first."]
    elif endpoint == "leaderboard" and result.rows:
        idx = result.column_names.index(metric_cols[0]) if metric_cols else len(result.schema) - 1
        name_idx = 1 if len(result.schema) > 1 else 0
        top, bottom = result.rows[0], result.rows[-1]
        label = (lambda row: "a masked group" if masked and "target" in result.masked_columns
                 else str(row[name_idx]))
        parts = [
            f"Ranking of {len(result.rows)} targets by {metric} for {scope} in {window}.",
            f"Highest: {label(top)} ({_format_value(top[idx])}); "
            f"lowest: {label(bottom)} ({_format_value(bottom[idx])}).",
        ]
    elif endpoint == "timeseries" and metric_cols:
        idx = result.column_names.index(metric_cols[0])
        observed = [(row[0], row[idx]) for row in result.rows if row[idx] is not None]
        parts = [f"{_prettify(metric_cols[0])} for {scope}, by {result.schema[0]['name']}, {window}."]
        if observed:
            peak = max(observed, key=lambda p: p[1])
            low = min(observed, key=lambda p: p[1])
            parts.append(
                f"Peak at {peak[0]} ({_format_value(peak[1])}); "
                f"lowest at {low[0]} ({_format_value(low[1])})."
            )
        else:
            parts.append("No matching data in the window.")
    elif metric_cols and len(result.rows) == 1:
        idx = result.column_names.index(metric_cols[0])
        value = result.rows[0][idx]
        parts = [f"{metric} for {scope} over {window} was {_format_value(value)}."]
    elif metric_cols:
        idx = result.column_names.index(metric_cols[0])
        observed = [row for row in result.rows if row[idx] is not None]
        parts = [f"{metric} for {scope} over {window}, {len(result.rows)} groups."]
        if observed:
            top = max(observed, key=lambda row: row[idx])
            parts.append(
                f"Largest group: {top[0]} ({_format_value(top[idx])})."
            )
    else:
        parts = [f"Result for {scope} over {window}: {len(result.rows)} rows."]
    if masked:
        parts.append("Some values are masked by policy.")
    return " ".join(parts)


def _tier1_fix(request: AnalyticsRequest, error: ValidationError) -> bool:
    """Apply the closed list of programmatic fixes in place; True when applied.

    Fixes: swap reversed dates; widen a single-day [d, d] range to [d, d+1);
    drop dangling order_by entries. Everything else is tier 2.
    """
    if error.kind == "BadDateRange" and isinstance(request.date_range, DateSpec):
        spec = request.date_range
        try:
            import datetime as _dt

            start = _dt.date.fromisoformat(spec.start_date)
            end = _dt.date.fromisoformat(spec.end_date)
        except ValueError:
            return False
        if end < start:
            request.date_range = DateSpec(spec.end_date, spec.start_date, spec.tz)
            return True
        if end == start:
            request.date_range = DateSpec(
                spec.start_date, (start + _dt.timedelta(days=1)).isoformat(), spec.tz
            )
            return True
        return False
    if error.kind == "DanglingOrderBy":
        request.order_by = []
        return True
    return False


class Orchestrator:
    def __init__(
        self,
        store: AnalyticsStore,
        planner,
        sessions: InMemorySessionStore | None = None,
        clock=None,
        tz: str = DEFAULT_TZ,
    ):
        self.store = store
        self.planner = planner
        self.sessions = sessions or InMemorySessionStore()
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self.tz = tz

    # -- audit helpers ---------------------------------------------------

    def _audit(self, session: SessionState, stage: str, event: str, detail: str = "") -> None:
        assert stage in STAGES and event in EVENTS
        session.audit.append(
            AuditEntry(
                timestamp=self._clock().isoformat(),
                stage=stage,
                event=event,
                detail=detail,
            )
        )

    # -- public API --------------------------------------------------------

    def handle_turn(self, session: SessionState, utterance: str) -> tuple[SessionState, AgentResponse]:
        """Process one utterance; never raises, failures become responses."""
        with session.lock:
            try:
                response = self._handle_locked(session, utterance)
            except Exception as exc:  # a stage bug must not crash the caller
                self._audit(session, "Done", "exec_error", f"unhandled: {type(exc).__name__}")
                response = AgentResponse(text=INTERNAL_ERROR_TEXT, status="failed")
            response = self._scrub_outbound(session, response)
            session.turn_history.append({"utterance": utterance, "status": response.status})
            return session, response

    def _scrub_outbound(self, session: SessionState, response: AgentResponse) -> AgentResponse:
        tainted = scan_outbound(response.text) or (
            response.chart is not None and scan_outbound(json.dumps(response.chart.to_json()))
        )
        if tainted:
            self._audit(session, "Done", "refuse", "outbound sentinel leak withheld")
            return AgentResponse(text=INTERNAL_ERROR_TEXT, status="failed")
        return response

    # -- stages -------------------------------------------------------------

    def _handle_locked(self, session: SessionState, utterance: str) -> AgentResponse:
        decision = apply_guardrails(utterance)
        if not decision.allowed:
            self._audit(session, "Parse", "refuse", f"guardrail: {decision.reason}")
            session.pending_clarification = None
            return AgentResponse(text=REFUSAL_TEXT, status="refused")

        # A reply to a pending clarification continues the same flow.
        if session.pending_clarification is not None:
            chosen = self._match_clarification(session, utterance)
            if chosen is not None:
                frame = session.pending_clarification["frame"]
                session.pending_clarification = None
                self._audit(session, "Targets", "ok", f"clarified to {chosen}")
                return self._continue_flow(session, frame, [chosen])
            session.pending_clarification = None  # fresh flow below

        session.clarification_count_this_flow = 0

        hint = SessionHint(
            now=self._clock(),
            tz=session.tz,
            prior_metrics=session.last_metrics or None,
            has_targets=bool(session.resolved_targets),
        )
        try:
            frame = self.planner.parse_intent(utterance, self.store.catalog, hint)
        except UninterpretableIntent:
            self._audit(session, "Parse", "validation_error", "uninterpretable intent")
            lowered = utterance.lower()
            if any(marker in lowered for marker in _KB_MARKERS):
                return AgentResponse(text=KB_STUB_TEXT, status="failed")
            return AgentResponse(text=UNINTERPRETABLE_TEXT, status="failed")
        self._audit(
            session, "Parse", "ok",
            f"metrics={','.join(frame.metrics) or '-'} targets={len(frame.target_phrases)}",
        )

        targets, response = self._targets_stage(session, frame)
        if response is not None:
            return response
        return self._continue_flow(session, frame, targets)

    def _match_clarification(self, session: SessionState, utterance: str) -> str | None:
        candidates = session.pending_clarification["candidates"]
        text = utterance.strip().strip(".")
        if text.isdigit():
            index = int(text) - 1
            if 0 <= index < len(candidates):
                return candidates[index]["id"]
            return None
        lowered = text.lower()
        for candidate in candidates:
            if candidate["name"].lower() == lowered:
                return candidate["id"]
        return None

    def _targets_stage(self, session, frame) -> tuple[list[str], AgentResponse | None]:
        org = self.store.org
        principal = session.principal
        if frame.target_phrases:
            ids: list[str] = []
            for phrase in frame.target_phrases:
                outcome = resolve_targets(phrase, org, principal)
                if isinstance(outcome, Resolved):
                    ids.extend(outcome.ids)
                    continue
                if isinstance(outcome, Ambiguous):
                    if session.clarification_count_this_flow >= 1:
                        self._audit(session, "Targets", "validation_error",
                                    "ambiguous after clarification budget")
                        return [], AgentResponse(text=TARGET_PROBLEM_TEXT, status="failed")
                    session.clarification_count_this_flow += 1
                    candidates = [{"id": c.id, "name": c.name} for c in outcome.candidates]
                    session.pending_clarification = {"frame": frame, "candidates": candidates}
                    self._audit(session, "Targets", "clarify",
                                f"{len(candidates)} candidates for {phrase!r}")
                    return [], AgentResponse(
                        text=f"Which one did you mean by {phrase!r}?",
                        status="needs_clarification",
                        clarification={
                            "question": f"Which one did you mean by {phrase!r}?",
                            "candidates": candidates,
                        },
                    )
                if isinstance(outcome, Denied):
                    self._audit(session, "Targets", "denied", "exact out-of-scope name match")
                    return [], AgentResponse(text=TARGET_PROBLEM_TEXT, status="failed")
                self._audit(session, "Targets", "validation_error", f"not found: {phrase!r}")
                return [], AgentResponse(text=TARGET_PROBLEM_TEXT, status="failed")
            deduped = list(dict.fromkeys(ids))
        elif session.resolved_targets:
            deduped = list(session.resolved_targets)
            self._audit(session, "Targets", "ok", f"reused {len(deduped)} session target(s)")
        else:
            deduped = session.principal.permitted_roots(org)
            self._audit(session, "Targets", "ok", "no-target metric; scoped to permitted roots")
            if not deduped:
                return [], AgentResponse(text=PERMISSION_TEXT, status="failed")

        for target_id in deduped:
            try:
                if not check_permission(principal, target_id, org):
                    self._audit(session, "Targets", "denied", f"permission check failed: {target_id}")
                    return [], AgentResponse(text=PERMISSION_TEXT, status="failed")
            except Exception:
                self._audit(session, "Targets", "denied", f"unknown target id: {target_id}")
                return [], AgentResponse(text=TARGET_PROBLEM_TEXT, status="failed")
        if frame.target_phrases:
            self._audit(session, "Targets", "ok", f"resolved {len(deduped)} target(s)")
        return deduped, None

    def _continue_flow(self, session, frame, targets: list[str]) -> AgentResponse:
        if frame.date_expr is not None:
            try:
                window = resolve(frame.date_expr, self._clock(), session.tz)
            except InvalidExpr:
                self._audit(session, "Query", "validation_error", "bad date expression")
                return AgentResponse(
                    text="That date range didn't make sense to me.", status="failed"
                )
        elif session.time_window is not None:
            window = session.time_window
        else:
            window = resolve(DEFAULT_WINDOW, self._clock(), session.tz)

        outcome = self.run_query_stage(session, frame, targets, window)
        if isinstance(outcome, AgentResponse):
            return outcome
        validated, result = outcome

        chart = self._viz_stage(session, frame, result)

        text = synthesize_response(result, frame)
        session.resolved_targets = list(targets)
        session.time_window = window
        session.last_request = validated
        if frame.metrics and frame.metrics != ["records"]:
            session.last_metrics = list(frame.metrics)
        self._audit(session, "Done", "ok", f"rows={len(result.rows)}")
        return AgentResponse(text=text, status="answered", table=result, chart=chart)

    def run_query_stage(self, session, frame, targets, window):
        """Draft, validate, execute with the two-tier recovery protocol.

        Returns (ValidatedRequest, TabularResult) or a terminal AgentResponse.
        """
        error_context: str | None = None
        for attempt in range(1, MAX_QUERY_ATTEMPTS + 1):
            try:
                request = self.planner.draft_request(
                    frame, self.store.catalog, window, targets,
                    error_context=error_context, org=self.store.org,
                )
            except DraftError as exc:
                self._audit(session, "Query", "retry", f"attempt {attempt}: draft error")
                error_context = str(exc)
                continue

            validated = validate(request, self.store.catalog)
            if isinstance(validated, ValidationError):
                if validated.recoverable_programmatically and _tier1_fix(request, validated):
                    self._audit(session, "Query", "validation_error",
                                f"{validated.kind}: fixed programmatically")
                    validated = validate(request, self.store.catalog)
            if isinstance(validated, ValidationError):
                self._audit(session, "Query", "retry",
                            f"attempt {attempt}: {validated.kind}")
                error_context = f"{validated.kind}: {validated.detail}"
                continue

            try:
                result = self.store.execute(validated, session.principal)
            except PermissionDenied:
                self._audit(session, "Query", "denied", "execution permission denied")
                return AgentResponse(text=PERMISSION_TEXT, status="failed")
            except EndpointError as exc:
                self._audit(session, "Query", "retry", f"attempt {attempt}: exec error")
                error_context = str(exc)
                continue

            self._audit(session, "Query", "ok", f"attempt {attempt}: rows={len(result.rows)}")
            return validated, result

        self._audit(session, "Query", "exec_error",
                    f"{MAX_QUERY_ATTEMPTS} attempts exhausted; asking the user")
        return AgentResponse(text=GIVE_UP_TEXT, status="failed")

    def _viz_stage(self, session, frame, result: TabularResult) -> ChartConfig | None:
        chart_type = select_chart_type(result, frame.wants_viz)
        if isinstance(chart_type, Decline):
            self._audit(session, "Viz", "ok", f"declined: {chart_type.reason}")
            return None
        try:
            config = build_chart_config(result, chart_type)
        except ChannelError as exc:
            self._audit(session, "Viz", "validation_error", f"channels: {exc}")
            return None
        if result.masked_columns:
            policy = MaskingPolicy(
                enabled=True,
                table=session.pseudonyms,
                masked_values=frozenset(node.name for node in self.store.org),
                pseudonym_columns=frozenset({"target_id"}),
            )
            config = apply_chart_masking(config, policy)
        self._audit(session, "Viz", "ok", f"{chart_type} chart")
        return config


def export_audit_jsonl(session: SessionState) -> str:
    """Audit log wire format: one redacted entry per line."""
    return "\n".join(json.dumps(entry.to_json(), ensure_ascii=False) for entry in session.audit)
