"""Deterministic rule-based planner backend.

Intent parsing works by staged span matching over the utterance: date
phrases first, then the leftmost metric phrase, then grain/dimension
phrases, and finally proper-noun spans (everything not already consumed)
as target phrases. The metric/synonym lexicon is a checked-in data file,
so the vocabulary can grow without code changes.
"""

from __future__ import annotations

import datetime as _dt
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from ..catalog import Catalog
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
    local_date,
)
from ..query import (
    AnalyticsRequest,
    DateRange,
    Dimension,
    FilterClause,
    TimeGrain,
    classify_endpoint,
)
from .base import BackendInfo, SessionHint, UninterpretableIntent
from .frames import IntentFrame

_MONTHS = {
    name: i + 1
    for i, name in enumerate(
        ["january", "february", "march", "april", "may", "june", "july",
         "august", "september", "october", "november", "december"]
    )
}
_MONTH_ALT = "|".join(_MONTHS)

RECORDS_SELECTS = ["col:occurred_at", "col:target", "col:kind", "col:duration", "col:disposition"]
FALLBACK_SELECT = "count:*:interactions"


@lru_cache(maxsize=1)
def load_lexicon() -> dict:
    text = resources.files("querydesk.planner").joinpath("lexicon.json").read_text("utf-8")
    return json.loads(text)


@dataclass
class _Span:
    start: int
    end: int


class _SpanMask:
    """Tracks consumed character ranges of the utterance."""

    def __init__(self) -> None:
        self.spans: list[_Span] = []

    def overlaps(self, start: int, end: int) -> bool:
        return any(s.start < end and start < s.end for s in self.spans)

    def add(self, start: int, end: int) -> None:
        self.spans.append(_Span(start, end))

    def covers(self, pos: int) -> bool:
        return any(s.start <= pos < s.end for s in self.spans)


def _phrase_pattern(phrase: str) -> re.Pattern:
    return re.compile(r"\b" + re.escape(phrase).replace(r"\ ", r"\s+") + r"\b")


@lru_cache(maxsize=512)
def _compiled(phrase: str) -> re.Pattern:
    return _phrase_pattern(phrase)


def _match_phrases(lower: str, mask: _SpanMask, phrases: list[str]) -> re.Match | None:
    """Leftmost match among the given phrases, preferring longer ones on ties."""
    best: re.Match | None = None
    best_len = -1
    for phrase in phrases:
        for m in _compiled(phrase).finditer(lower):
            if mask.overlaps(m.start(), m.end()):
                continue
            if best is None or m.start() < best.start() or (
                m.start() == best.start() and len(phrase) > best_len
            ):
                best = m
                best_len = len(phrase)
            break  # only the first non-masked occurrence per phrase
    return best


# --- date phrase grammar -----------------------------------------------------

_ISO_RANGE = re.compile(r"\bfrom\s+(\d{4}-\d{2}-\d{2})\s+(?:to|through|until)\s+(\d{4}-\d{2}-\d{2})\b")
_ISO_DAY = re.compile(r"\bon\s+(\d{4}-\d{2}-\d{2})\b")
_QUARTER = re.compile(r"\bq([1-4])\s+(\d{4})\b")
_MONTH_YEAR = re.compile(rf"\b({_MONTH_ALT})\s+(\d{{4}})\b")
_DAY_MONTH = re.compile(
    rf"\b({_MONTH_ALT})\s+(\d{{1,2}})(?:st|nd|rd|th)?(?:,?\s+(\d{{4}}))?\b"
)
_LAST_N = re.compile(r"\b(?:last|past|previous)\s+(\d+)\s+(day|days|week|weeks)\b")
_LAST_UNIT = re.compile(r"\b(?:last|previous)\s+(week|month|quarter)\b")
_THIS_UNIT = re.compile(r"\bthis\s+(week|month|quarter)\b")
_YESTERDAY = re.compile(r"\byesterday\b")
_TODAY = re.compile(r"\btoday\b")


def _quarter_of(day: _dt.date) -> tuple[int, int]:
    return day.year, (day.month - 1) // 3 + 1


def _previous_quarter(day: _dt.date) -> QuarterOf:
    year, quarter = _quarter_of(day)
    return QuarterOf(year - 1, 4) if quarter == 1 else QuarterOf(year, quarter - 1)


def extract_date_expr(lower: str, mask: _SpanMask, hint: SessionHint) -> DateExpr | None:
    """First date phrase found, in priority order; consumes its span."""
    today = local_date(hint.now, hint.tz)

    m = _ISO_RANGE.search(lower)
    if m and not mask.overlaps(m.start(), m.end()):
        mask.add(m.start(), m.end())
        return Explicit(_dt.date.fromisoformat(m.group(1)), _dt.date.fromisoformat(m.group(2)))
    m = _ISO_DAY.search(lower)
    if m and not mask.overlaps(m.start(), m.end()):
        mask.add(m.start(), m.end())
        return SingleDay(_dt.date.fromisoformat(m.group(1)))
    m = _QUARTER.search(lower)
    if m and not mask.overlaps(m.start(), m.end()):
        mask.add(m.start(), m.end())
        return QuarterOf(int(m.group(2)), int(m.group(1)))
    m = _DAY_MONTH.search(lower)
    if m and not mask.overlaps(m.start(), m.end()):
        mask.add(m.start(), m.end())
        year = int(m.group(3)) if m.group(3) else today.year
        return SingleDay(_dt.date(year, _MONTHS[m.group(1)], int(m.group(2))))
    m = _MONTH_YEAR.search(lower)
    if m and not mask.overlaps(m.start(), m.end()):
        mask.add(m.start(), m.end())
        return MonthOf(int(m.group(2)), _MONTHS[m.group(1)])
    m = _LAST_N.search(lower)
    if m and not mask.overlaps(m.start(), m.end()):
        mask.add(m.start(), m.end())
        unit = "weeks" if m.group(2).startswith("week") else "days"
        return TrailingWindow(int(m.group(1)), unit)
    m = _LAST_UNIT.search(lower)
    if m and not mask.overlaps(m.start(), m.end()):
        mask.add(m.start(), m.end())
        unit = m.group(1)
        if unit == "quarter":
            return _previous_quarter(today)
        return RelativeCalendarUnit(unit, -1)
    m = _THIS_UNIT.search(lower)
    if m and not mask.overlaps(m.start(), m.end()):
        mask.add(m.start(), m.end())
        unit = m.group(1)
        if unit == "quarter":
            return QuarterOf(*_quarter_of(today))
        return ThisUnit(unit)
    m = _YESTERDAY.search(lower)
    if m and not mask.overlaps(m.start(), m.end()):
        mask.add(m.start(), m.end())
        return RelativeDay(-1)
    m = _TODAY.search(lower)
    if m and not mask.overlaps(m.start(), m.end()):
        mask.add(m.start(), m.end())
        return RelativeDay(0)
    return None


_DISPOSITION_QUOTED = re.compile(
    r"['‘’\"]([^'‘’\"]+)['‘’\"][^'\"]{0,40}?\bdisposition", re.IGNORECASE
)
_DISPOSITION_AFTER = re.compile(
    r"disposition[s]?\s*(?:of|=|:)?\s*['‘’\"]([^'‘’\"]+)['‘’\"]", re.IGNORECASE
)

_WORD_RE = re.compile(r"[A-Za-z0-9_']+")


def extract_filters(original: str, mask: _SpanMask) -> list[FilterClause]:
    filters: list[FilterClause] = []
    for pattern in (_DISPOSITION_QUOTED, _DISPOSITION_AFTER):
        m = pattern.search(original)
        if m and not mask.overlaps(m.start(), m.end()):
            mask.add(m.start(), m.end())
            filters.append(FilterClause("disposition", "in", (m.group(1),)))
            break
    return filters


def extract_targets(original: str, mask: _SpanMask, stopwords: set[str], unit_words: set[str]) -> list[str]:
    """Proper-noun spans not already consumed by metric/date/grain phrases.

    A span starts at a capitalized non-stopword and extends right over
    capitalized words and lowercase unit-ish words, plus left over an
    immediately preceding lowercase modifier (e.g. "main Support call center").
    """
    tokens = [(m.group(0), m.start(), m.end()) for m in _WORD_RE.finditer(original)]
    usable = [
        (word, start, end)
        for word, start, end in tokens
        if not mask.overlaps(start, end)
    ]
    spans: list[str] = []
    i = 0
    while i < len(usable):
        word, start, end = usable[i]
        lower = word.lower()
        if not word[0].isupper() or lower in stopwords:
            i += 1
            continue
        j = i
        span_end = end
        while j + 1 < len(usable):
            nxt, nxt_start, nxt_end = usable[j + 1]
            gap = original[span_end:nxt_start]
            if gap.strip() != "":  # punctuation or consumed text breaks the span
                break
            nxt_lower = nxt.lower()
            if nxt[0].isupper() and nxt_lower not in stopwords:
                j += 1
                span_end = nxt_end
                continue
            if nxt_lower in unit_words:
                j += 1
                span_end = nxt_end
                continue
            break
        span_start = start
        # Pull in one lowercase modifier directly before the span.
        if i > 0:
            prev, prev_start, prev_end = usable[i - 1]
            gap = original[prev_end:span_start]
            if (
                gap.strip() == ""
                and prev[0].islower()
                and prev.lower() not in stopwords
                and prev.lower() not in unit_words
            ):
                span_start = prev_start
        spans.append(original[span_start:span_end])
        i = j + 1
    return spans


class RulePlanner:
    """Lexicon-driven deterministic backend; identical inputs give identical outputs."""

    info = BackendInfo(name="rule", deterministic=True)

    def __init__(self) -> None:
        lex = load_lexicon()
        self._metrics: list[dict] = lex["metrics"]
        self._select_by_metric = {m["metric"]: m["select"] for m in self._metrics}
        self._dimensions = lex["dimensions"]
        self._grains = lex["grains"]
        self._chart_types = lex["chart_types"]
        self._ranking_words = set(lex["ranking_words"])
        self._stopwords = set(lex["stopwords"])
        self._unit_words = set(lex["unit_words"])

    # -- intent parsing --------------------------------------------------

    def parse_intent(self, utterance: str, catalog: Catalog, hint: SessionHint) -> IntentFrame:
        if not utterance or not utterance.strip():
            raise UninterpretableIntent("empty utterance")
        original = utterance
        lower = utterance.lower()
        mask = _SpanMask()

        date_expr = extract_date_expr(lower, mask, hint)

        metric: str | None = None
        entries = sorted(
            ((phrase, entry) for entry in self._metrics for phrase in entry["phrases"]),
            key=lambda pair: -len(pair[0]),
        )
        best: tuple[int, int, str] | None = None  # (start, -len, metric)
        for phrase, entry in entries:
            m = _compiled(phrase).search(lower)
            while m and mask.overlaps(m.start(), m.end()):
                m = _compiled(phrase).search(lower, m.end())
            if m is None:
                continue
            key = (m.start(), -len(phrase), entry["metric"])
            if best is None or key < best:
                best = key
                best_match = m
        if best is not None:
            metric = best[2]
            mask.add(best_match.start(), best_match.end())

        breakdown = []
        for entry in self._grains:
            m = _match_phrases(lower, mask, entry["phrases"])
            if m:
                mask.add(m.start(), m.end())
                breakdown.append(TimeGrain(entry["grain"]))
                break  # at most one grain
        for entry in self._dimensions:
            m = _match_phrases(lower, mask, entry["phrases"])
            if m:
                mask.add(m.start(), m.end())
                breakdown.append(Dimension(entry["field"]))

        wants_viz = None
        for entry in self._chart_types:
            m = _match_phrases(lower, mask, entry["phrases"])
            if m:
                mask.add(m.start(), m.end())
                wants_viz = entry["type"]
                break

        ranking = False
        for word in sorted(self._ranking_words):
            m = _compiled(word).search(lower)
            if m and not mask.overlaps(m.start(), m.end()):
                ranking = True
                mask.add(m.start(), m.end())  # not a target-phrase word
                break

        filters = extract_filters(original, mask)
        targets = extract_targets(original, mask, self._stopwords, self._unit_words)

        metrics = [metric] if metric else []
        if not metrics and hint.prior_metrics and (date_expr or targets or breakdown):
            # Follow-up turns reuse the previous question's metric.
            metrics = list(hint.prior_metrics)
        if not metrics and not targets:
            raise UninterpretableIntent("no recognizable metric or target in the utterance")

        # Grain keys sort first so drafting emits [grain, dims...] stably.
        breakdown.sort(key=lambda k: 0 if isinstance(k, TimeGrain) else 1)
        return IntentFrame(
            metrics=metrics,
            date_expr=date_expr,
            target_phrases=targets,
            breakdown=breakdown,
            filters=filters,
            ranking=ranking,
            wants_viz=wants_viz,
        )

    # -- request drafting --------------------------------------------------

    def _selects_for(self, metrics: list[str], endpoint: str) -> list[str]:
        if endpoint == "records":
            return list(RECORDS_SELECTS)
        selects = []
        for name in metrics:
            select = self._select_by_metric.get(name, name)
            if select:
                selects.append(select)
        return selects or [FALLBACK_SELECT]

    def draft_request(
        self,
        frame: IntentFrame,
        catalog: Catalog,
        date_range: DateRange,
        targets: list[str],
        error_context: str | None = None,
        org=None,
        utterance: str | None = None,
    ) -> AnalyticsRequest:
        endpoint = classify_endpoint(frame)
        selects = self._selects_for(frame.metrics, endpoint)
        group_by = [k.grain if isinstance(k, TimeGrain) else k.field for k in frame.breakdown]
        if endpoint in ("leaderboard", "records"):
            group_by = []
        request_targets = list(targets)
        if endpoint == "leaderboard" and org is not None:
            expanded: list[str] = []
            for t in request_targets:
                kids = org.children(t)
                expanded.extend(kids or [t])
            request_targets = list(dict.fromkeys(expanded))

        if error_context:
            # Tier-2 redraft: drop anything the validator named, then refill.
            named = set(re.findall(r"'([^']+)'", error_context))
            selects = [s for s in selects if not (named & set(re.split(r"[:\s]+", s)))]
            if not selects and endpoint != "records":
                selects = [FALLBACK_SELECT]
            group_by = [g for g in group_by if g not in named]
            if endpoint == "timeseries" and not any(
                g in ("hour", "day", "week", "month") for g in group_by
            ):
                group_by.insert(0, "day")

        explanation = (
            f"{endpoint} over {len(request_targets)} target(s) from "
            f"{date_range.start_date} to {date_range.end_date}"
        )
        return AnalyticsRequest(
            endpoint=endpoint,
            select=selects,
            date_range=date_range,
            targets=request_targets,
            filters=list(frame.filters),
            group_by=group_by,
            order_by=[],
            explanation=explanation,
        )
