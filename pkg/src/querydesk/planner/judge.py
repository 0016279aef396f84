"""Binary answer judging: a deterministic oracle and a remote LLM judge.

Both receive the user query, a reference answer, and a candidate answer,
and return Correct/Incorrect with a rationale for incorrect cases. The
oracle checks the returned values, entity scope, and temporal/filter
semantics directly; the remote judge delegates to a model and parses its
verdict line.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING

from ..query import ValidatedRequest
from ..tables import TabularResult, compare_tables
from .base import BackendInfo, JudgeUnavailable, JudgeVerdict
from .parsing import ParseError, extract_structured
from .prompts import render_judge_prompt

if TYPE_CHECKING:  # pragma: no cover
    from .remote import ChatCompletionClient

__all__ = ["CaseAnswer", "JudgeVerdict", "OracleJudge", "RemoteJudge"]

VALUE_REL_TOL = 1e-6


@dataclass
class CaseAnswer:
    """An executed request plus the table it produced."""

    request: ValidatedRequest
    table: TabularResult

    def to_json(self) -> dict:
        return {"request": self.request.to_json(), "table": self.table.to_json()}


def _filter_multiset(request: ValidatedRequest) -> Counter:
    normalized = []
    for f in request.filters:
        value = f.value
        if isinstance(value, (list, tuple)):
            value = tuple(sorted(str(v) for v in value))
        normalized.append((f.field, f.op, value))
    return Counter(normalized)


class OracleJudge:
    """Deterministic stand-in for an LLM judge; usable as the CI ground truth."""

    info = BackendInfo(name="oracle", deterministic=True)

    @property
    def name(self) -> str:
        return self.info.name

    def judge(
        self, query: str, reference: CaseAnswer, candidate: CaseAnswer | None
    ) -> JudgeVerdict:
        if candidate is None:
            return JudgeVerdict("Incorrect", "no executed result was produced")

        ref_req, cand_req = reference.request, candidate.request
        if set(ref_req.targets) != set(cand_req.targets):
            return JudgeVerdict(
                "Incorrect",
                f"the entity scope differs: expected targets {sorted(ref_req.targets)}, "
                f"got {sorted(cand_req.targets)}",
            )
        if ref_req.date_range != cand_req.date_range:
            return JudgeVerdict(
                "Incorrect",
                f"the date range differs: expected [{ref_req.date_range.start_date}, "
                f"{ref_req.date_range.end_date}), got [{cand_req.date_range.start_date}, "
                f"{cand_req.date_range.end_date})",
            )
        if _filter_multiset(ref_req) != _filter_multiset(cand_req):
            return JudgeVerdict("Incorrect", "the filter semantics differ from the reference")

        diff = compare_tables(reference.table, candidate.table, rel_tol=VALUE_REL_TOL)
        if diff is None:
            return JudgeVerdict("Correct")
        if diff.column is not None and diff.expected is not None:
            return JudgeVerdict(
                "Incorrect",
                f"The {diff.column} value in the model response ({diff.actual}) differs "
                f"from the ground-truth value ({diff.expected}).",
            )
        return JudgeVerdict("Incorrect", diff.detail)


class RemoteJudge:
    """LLM-backed judge speaking the chat-completion protocol."""

    def __init__(self, client: "ChatCompletionClient", name: str = "remote-judge"):
        self._client = client
        self.info = BackendInfo(name=name, deterministic=False)

    @property
    def name(self) -> str:
        return self.info.name

    def judge(
        self, query: str, reference: CaseAnswer, candidate: CaseAnswer | None
    ) -> JudgeVerdict:
        if candidate is None:
            return JudgeVerdict("Incorrect", "no executed result was produced")
        prompt = render_judge_prompt(query, reference.to_json(), candidate.to_json())
        try:
            text = self._client.complete([{"role": "user", "content": prompt}])
        except Exception as exc:  # transport failure is never a silent Correct
            raise JudgeUnavailable(str(exc)) from exc
        try:
            verdict = extract_structured(text, "verdict")
        except ParseError as exc:
            raise JudgeUnavailable(f"unparseable judge output: {exc}") from exc
        return verdict
