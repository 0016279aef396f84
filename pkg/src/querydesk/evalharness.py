"""Evaluation harness: corpus format, success metrics, and reports.

A corpus is a JSONL file of use cases, each carrying a natural-language
query, a gold request, and the gold answer produced by executing that
request (gold answers are computed, never hand-typed). Execution success
counts cases where the pipeline produced a table at all; end-to-end
accuracy counts cases a judge marks Correct. Judges that fail to render a
verdict abstain: the case leaves that judge's denominator and is flagged.

The corpus anchors every relative date phrase to one fixed session clock
(CORPUS_NOW/CORPUS_TZ), so gold ranges stay valid over time.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .dates import (
    MonthOf,
    QuarterOf,
    RelativeCalendarUnit,
    RelativeDay,
    ThisUnit,
    TrailingWindow,
    resolve,
)
from .orchestrator import InMemorySessionStore, Orchestrator
from .planner.base import JudgeUnavailable
from .planner.judge import CaseAnswer
from .planner.rule import RulePlanner
from .query import AnalyticsRequest, ValidatedRequest, validate
from .store import AnalyticsStore, Dataset
from .tables import TabularResult, compare_tables
from .targets import Org, Principal

INTENT_CLASSES = ("point_metric", "trend_line", "categorical_breakdown")

CORPUS_NOW = datetime(2025, 6, 15, 17, 0, tzinfo=timezone.utc)
CORPUS_TZ = "America/Los_Angeles"


class CorpusError(ValueError):
    """Corpus fails its integrity check (empty, invalid gold, stale answers)."""


class SpecError(ValueError):
    """Corpus build spec cannot be satisfied."""


def corpus_principal(ref: str, org: Org) -> Principal:
    """The named standard principal for a dataset's org."""
    if ref == "admin":
        return Principal.for_subtrees("admin", org, org.roots(), ("unmasked",))
    if ref == "manager":
        return Principal.for_subtrees("manager", org, ["t-01"], ("unmasked",))
    if ref == "analyst_masked":
        return Principal.for_subtrees("analyst", org, ["t-01"])
    if ref == "support_lead":
        return Principal.for_subtrees("support-lead", org, ["t-02"], ("unmasked",))
    raise CorpusError(f"unknown principal_ref {ref!r}")


@dataclass
class UseCase:
    id: str
    query: str
    intent_class: str
    gold_request: ValidatedRequest
    gold_answer: TabularResult
    principal_ref: str

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "query": self.query,
            "intent_class": self.intent_class,
            "gold_request": self.gold_request.to_json(),
            "gold_answer": self.gold_answer.to_json(),
            "principal_ref": self.principal_ref,
        }

    @classmethod
    def from_json(cls, obj: dict, dataset: Dataset) -> "UseCase":
        validated = validate(AnalyticsRequest.from_json(obj["gold_request"]), dataset.catalog)
        if not isinstance(validated, ValidatedRequest):
            raise CorpusError(f"case {obj.get('id')!r}: gold request invalid: {validated}")
        if obj.get("intent_class") not in INTENT_CLASSES:
            raise CorpusError(f"case {obj.get('id')!r}: bad intent_class")
        return cls(
            id=obj["id"],
            query=obj["query"],
            intent_class=obj["intent_class"],
            gold_request=validated,
            gold_answer=TabularResult.from_json(obj["gold_answer"]),
            principal_ref=obj.get("principal_ref", "manager"),
        )


def save_corpus(corpus: list[UseCase], path: str | Path) -> None:
    lines = [json.dumps(case.to_json(), ensure_ascii=False) for case in corpus]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")


def load_corpus(path: str | Path, dataset: Dataset) -> list[UseCase]:
    text = Path(path).read_text("utf-8")
    cases = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            cases.append(UseCase.from_json(json.loads(line), dataset))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorpusError(f"line {lineno}: {exc}") from exc
    return cases


# --- corpus construction ------------------------------------------------------

@dataclass
class CorpusSpec:
    n_cases: int = 30
    seed: int = 11


_AXIS_QUERIES = [
    # (query, intent_class, principal_ref, request-builder kwargs)
    ("Show me the average AI talk time percent for meetings at the Primary Office "
     "in Q1 2025, broken down month by month.",
     "trend_line", "manager",
     dict(endpoint="timeseries", select=["avg:percent_ai_talk_time:avg_percent_ai_talk_time"],
          targets=["t-01"], expr=QuarterOf(2025, 1), group_by=["month"])),
    ("What was the deflection rate for the main Support call center last month?",
     "point_metric", "manager",
     dict(endpoint="aggregate_metrics", select=["deflection_rate"], targets=["t-02"],
          expr=RelativeCalendarUnit("month", -1))),
    ("What was the hourly count of all voicemails for the Customer Care team yesterday?",
     "trend_line", "manager",
     dict(endpoint="timeseries", select=["all_voicemails"], targets=["t-05"],
          expr=RelativeDay(-1), group_by=["hour"])),
    ("Show me the total texts received for the Services department this month. "
     "Break it down by group and by week.",
     "categorical_breakdown", "manager",
     dict(endpoint="timeseries", select=["inbound_texts"], targets=["t-06"],
          expr=ThisUnit("month"), group_by=["week", "target"])),
    ("Show me the average resolution time for digital sessions last week, broken down by channel.",
     "categorical_breakdown", "manager",
     dict(endpoint="aggregate_metrics", select=["average_resolution_time"], targets=["t-01"],
          expr=RelativeCalendarUnit("week", -1), group_by=["channel"])),
    ("Show me the total number of internal meetings at the Primary Office in May 2025.",
     "point_metric", "manager",
     dict(endpoint="aggregate_metrics", select=["internal_meetings"], targets=["t-01"],
          expr=MonthOf(2025, 5))),
    ("Show me the CSAT score for calls at the Primary Office over the last 4 weeks, "
     "broken down week by week.",
     "trend_line", "manager",
     dict(endpoint="timeseries", select=["average_csat_score"], targets=["t-01"],
          expr=TrailingWindow(4, "weeks"), group_by=["week"])),
    ("How many surveys were completed each day for the main Support call center this week?",
     "trend_line", "manager",
     dict(endpoint="timeseries", select=["survey_count"], targets=["t-02"],
          expr=ThisUnit("week"), group_by=["day"])),
    ("How many handled calls resulted in a 'Sale Closed' disposition this month?",
     "point_metric", "manager",
     dict(endpoint="aggregate_metrics", select=["handled_calls"], targets=["t-01"],
          expr=ThisUnit("month"),
          filters=[{"field": "disposition", "op": "in", "value": ["Sale Closed"]}])),
]

_METRICS = [
    ("deflection rate", "deflection_rate"),
    ("average csat score", "average_csat_score"),
    ("average handle time", "avg_handle_time"),
    ("handled calls", "handled_calls"),
    ("total calls", "all_calls"),
    ("inbound texts", "inbound_texts"),
    ("average duration", "avg:duration:avg_duration"),
    ("survey count", "survey_count"),
    ("average resolution time", "average_resolution_time"),
]

_TARGETS = [
    ("Seattle Support", "t-03"),
    ("Portland Support", "t-04"),
    ("Customer Care", "t-05"),
    ("Digital Services", "t-07"),
    ("Inside Sales", "t-09"),
    ("Primary Office", "t-01"),
    ("Services department", "t-06"),
]

_WINDOWS = [
    ("last month", RelativeCalendarUnit("month", -1)),
    ("this month", ThisUnit("month")),
    ("last week", RelativeCalendarUnit("week", -1)),
    ("this week", ThisUnit("week")),
    ("in Q1 2025", QuarterOf(2025, 1)),
    ("in Q2 2025", QuarterOf(2025, 2)),
    ("in May 2025", MonthOf(2025, 5)),
    ("in February 2025", MonthOf(2025, 2)),
    ("over the last 4 weeks", TrailingWindow(4, "weeks")),
]

_GRAINS = [
    ("week by week", "week"),
    ("day by day", "day"),
    ("month by month", "month"),
]

_DIMS = [
    ("by channel", "channel"),
    ("by disposition", "disposition"),
]


def _gold(dataset: Dataset, store: AnalyticsStore, principal_ref: str, *, endpoint, select,
          targets, expr, group_by=(), filters=()) -> tuple[ValidatedRequest, TabularResult]:
    date_range = resolve(expr, CORPUS_NOW, CORPUS_TZ)
    request = AnalyticsRequest(
        endpoint=endpoint,
        select=list(select),
        date_range=date_range,
        targets=list(targets),
        filters=list(filters),
        group_by=list(group_by),
        explanation="gold request",
    )
    validated = validate(request, dataset.catalog)
    if not isinstance(validated, ValidatedRequest):
        raise SpecError(f"gold request failed validation: {validated}")
    answer = store.execute(validated, corpus_principal(principal_ref, dataset.org))
    return validated, answer


def build_corpus(spec: CorpusSpec, dataset: Dataset) -> list[UseCase]:
    """At least 30 cases, balanced across intent classes within one each.

    Includes fixed adaptations of the nine canonical query shapes plus
    template-generated cases; every gold answer comes from executing the
    gold request against the dataset.
    """
    if spec.n_cases < 9:
        raise SpecError("n_cases must cover at least the nine fixed cases")
    store = AnalyticsStore(dataset)
    rng = random.Random(spec.seed)
    cases: list[UseCase] = []
    seen_queries: set[str] = set()

    for query, intent_class, principal_ref, kwargs in _AXIS_QUERIES:
        request, answer = _gold(dataset, store, principal_ref, **kwargs)
        cases.append(UseCase(
            id=f"case-{len(cases) + 1:03d}",
            query=query,
            intent_class=intent_class,
            gold_request=request,
            gold_answer=answer,
            principal_ref=principal_ref,
        ))
        seen_queries.add(query.lower())

    per_class = spec.n_cases // 3
    remainder = spec.n_cases - per_class * 3
    quotas = {c: per_class for c in INTENT_CLASSES}
    for i in range(remainder):
        quotas[INTENT_CLASSES[i]] += 1
    counts = {c: sum(1 for case in cases if case.intent_class == c) for c in INTENT_CLASSES}

    def emit(query: str, intent_class: str, kwargs: dict) -> None:
        if query.lower() in seen_queries:
            return
        request, answer = _gold(dataset, store, "manager", **kwargs)
        cases.append(UseCase(
            id=f"case-{len(cases) + 1:03d}",
            query=query,
            intent_class=intent_class,
            gold_request=request,
            gold_answer=answer,
            principal_ref="manager",
        ))
        seen_queries.add(query.lower())
        counts[intent_class] += 1

    guard = 0
    while any(counts[c] < quotas[c] for c in INTENT_CLASSES):
        guard += 1
        if guard > 10_000:
            raise SpecError("could not satisfy class balance; widen the template pools")
        metric_phrase, select = rng.choice(_METRICS)
        target_name, target_id = rng.choice(_TARGETS)
        window_phrase, expr = rng.choice(_WINDOWS)
        needed = [c for c in INTENT_CLASSES if counts[c] < quotas[c]]
        intent_class = rng.choice(needed)
        if intent_class == "point_metric":
            emit(
                f"What was the {metric_phrase} for {target_name} {window_phrase}?",
                intent_class,
                dict(endpoint="aggregate_metrics", select=[select],
                     targets=[target_id], expr=expr),
            )
        elif intent_class == "trend_line":
            grain_phrase, grain = rng.choice(_GRAINS)
            emit(
                f"Show me the {metric_phrase} for {target_name} {window_phrase}, "
                f"broken down {grain_phrase}.",
                intent_class,
                dict(endpoint="timeseries", select=[select], targets=[target_id],
                     expr=expr, group_by=[grain]),
            )
        else:
            if rng.random() < 0.25:
                emit(
                    f"Top teams by {metric_phrase} at the Support call center {window_phrase}",
                    intent_class,
                    dict(endpoint="leaderboard", select=[select],
                         targets=["t-03", "t-04"], expr=expr),
                )
            else:
                dim_phrase, dim = rng.choice(_DIMS)
                emit(
                    f"Show me the {metric_phrase} for {target_name} {window_phrase}, "
                    f"broken down {dim_phrase}.",
                    intent_class,
                    dict(endpoint="aggregate_metrics", select=[select],
                         targets=[target_id], expr=expr, group_by=[dim]),
                )

    balance = [counts[c] for c in INTENT_CLASSES]
    if max(balance) - min(balance) > 1:
        raise SpecError(f"class balance violated: {counts}")
    return cases


# --- running -------------------------------------------------------------------

class PipelineUnderTest:
    """Runs each case through the full orchestrator in a fresh session."""

    def __init__(self, dataset: Dataset, planner=None, now: datetime = CORPUS_NOW,
                 tz: str = CORPUS_TZ):
        self.dataset = dataset
        self.store = AnalyticsStore(dataset)
        self.planner = planner or RulePlanner()
        self.now = now
        self.tz = tz

    def run(self, case: UseCase) -> CaseAnswer | None:
        principal = corpus_principal(case.principal_ref, self.dataset.org)
        orchestrator = Orchestrator(
            store=self.store,
            planner=self.planner,
            sessions=InMemorySessionStore(),
            clock=lambda: self.now,
            tz=self.tz,
        )
        session = orchestrator.sessions.get_or_create(f"eval-{case.id}", principal, tz=self.tz)
        session, response = orchestrator.handle_turn(session, case.query)
        if response.status != "answered" or response.table is None or session.last_request is None:
            return None
        return CaseAnswer(request=session.last_request, table=response.table)


@dataclass
class EvalReport:
    n_cases: int
    exec_success_rate: float
    e2e_accuracy: dict[str, float]
    e2e_accuracy_mean: float
    per_case: list[dict] = field(default_factory=list)
    abstentions: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "n_cases": self.n_cases,
            "exec_success_rate": self.exec_success_rate,
            "e2e_accuracy": dict(self.e2e_accuracy),
            "e2e_accuracy_mean": self.e2e_accuracy_mean,
            "abstentions": dict(self.abstentions),
            "per_case": list(self.per_case),
        }

    def render_text(self) -> str:
        lines = [
            f"cases: {self.n_cases}",
            f"execution success rate: {self.exec_success_rate:.2f}%",
        ]
        for judge, pct in self.e2e_accuracy.items():
            flagged = f" ({self.abstentions[judge]} abstained)" if self.abstentions.get(judge) else ""
            lines.append(f"e2e accuracy [{judge}]: {pct:.2f}%{flagged}")
        lines.append(f"e2e accuracy mean: {self.e2e_accuracy_mean:.2f}%")
        lines.append("")
        lines.append(f"{'case':<10} {'class':<22} {'executed':<9} verdicts")
        for row in self.per_case:
            verdicts = ", ".join(f"{j}={v}" for j, v in row["verdicts"].items())
            lines.append(
                f"{row['id']:<10} {row['intent_class']:<22} "
                f"{str(row['executed']).lower():<9} {verdicts}"
            )
        return "\n".join(lines)


def success_rate(succeeded: int, total: int) -> float:
    """Percentage with two-decimal rounding (87 of 90 is 96.67)."""
    if total == 0:
        raise CorpusError("empty denominator")
    return round(100.0 * succeeded / total, 2)


def check_corpus_integrity(corpus: list[UseCase], dataset: Dataset) -> None:
    if not corpus:
        raise CorpusError("corpus has no cases")
    store = AnalyticsStore(dataset)
    ids = set()
    for case in corpus:
        if case.id in ids:
            raise CorpusError(f"duplicate case id {case.id!r}")
        ids.add(case.id)
        principal = corpus_principal(case.principal_ref, dataset.org)
        fresh = store.execute(case.gold_request, principal)
        diff = compare_tables(case.gold_answer, fresh)
        if diff is not None:
            raise CorpusError(f"case {case.id}: gold answer is stale: {diff.detail}")


def run_eval(corpus: list[UseCase], system_under_test: PipelineUnderTest, judges: list) -> EvalReport:
    """Execute every case in a fresh session and aggregate the headline rates."""
    check_corpus_integrity(corpus, system_under_test.dataset)
    per_case: list[dict] = []
    executed_count = 0
    correct: dict[str, int] = {judge.name: 0 for judge in judges}
    abstained: dict[str, int] = {judge.name: 0 for judge in judges}

    for case in corpus:
        candidate = system_under_test.run(case)
        executed = candidate is not None
        executed_count += executed
        reference = CaseAnswer(request=case.gold_request, table=case.gold_answer)
        verdicts: dict[str, str] = {}
        for judge in judges:
            try:
                verdict = judge.judge(case.query, reference, candidate)
            except JudgeUnavailable:
                verdicts[judge.name] = "abstain"
                abstained[judge.name] += 1
                continue
            verdicts[judge.name] = verdict.verdict
            if verdict.correct:
                if not executed:
                    raise CorpusError(f"case {case.id}: judged Correct without executing")
                correct[judge.name] += 1
        per_case.append({
            "id": case.id,
            "intent_class": case.intent_class,
            "executed": executed,
            "verdicts": verdicts,
        })

    n = len(corpus)
    e2e = {}
    for judge in judges:
        denominator = n - abstained[judge.name]
        e2e[judge.name] = success_rate(correct[judge.name], denominator) if denominator else 0.0
    mean = round(sum(e2e.values()) / len(e2e), 2) if e2e else 0.0
    return EvalReport(
        n_cases=n,
        exec_success_rate=success_rate(executed_count, n),
        e2e_accuracy=e2e,
        e2e_accuracy_mean=mean,
        per_case=per_case,
        abstentions=abstained,
    )
