"""Backend interface and shared planner types."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import TYPE_CHECKING, Protocol, runtime_checkable

if TYPE_CHECKING:  # pragma: no cover
    from ..catalog import Catalog
    from ..dates import DateRange
    from ..query import AnalyticsRequest
    from .frames import IntentFrame


class UninterpretableIntent(Exception):
    """The utterance carries no analytics intent the backend can ground."""


class DraftError(Exception):
    """The backend failed to produce a parseable request draft."""


class JudgeUnavailable(Exception):
    """A judge could not render a verdict (transport failure, etc.)."""


@dataclass(frozen=True)
class BackendInfo:
    name: str
    deterministic: bool


@dataclass(frozen=True)
class JudgeVerdict:
    """Binary outcome; reason is present exactly when the verdict is Incorrect."""

    verdict: str  # Correct | Incorrect
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.verdict not in ("Correct", "Incorrect"):
            raise ValueError(f"bad verdict {self.verdict!r}")
        if (self.reason is None) != (self.verdict == "Correct"):
            raise ValueError("reason must be present iff the verdict is Incorrect")

    @property
    def correct(self) -> bool:
        return self.verdict == "Correct"

    def to_json(self) -> dict:
        out: dict = {"verdict": self.verdict}
        if self.reason is not None:
            out["reason"] = self.reason
        return out


@dataclass
class SessionHint:
    """Conversation context passed into intent parsing.

    `now` and `tz` anchor relative date phrases; prior metrics allow
    follow-ups like "and for last month?" to reuse the previous question's
    metric.
    """

    now: datetime
    tz: str
    prior_metrics: list[str] | None = None
    has_targets: bool = False


@runtime_checkable
class PlannerBackend(Protocol):
    info: BackendInfo

    def parse_intent(
        self, utterance: str, catalog: "Catalog", hint: SessionHint
    ) -> "IntentFrame": ...

    def draft_request(
        self,
        frame: "IntentFrame",
        catalog: "Catalog",
        date_range: "DateRange",
        targets: list[str],
        error_context: str | None = None,
        org: object | None = None,
        utterance: str | None = None,
    ) -> "AnalyticsRequest": ...
