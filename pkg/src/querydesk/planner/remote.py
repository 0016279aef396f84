"""Chat-completion backend: any endpoint speaking the common JSON shape.

No vendor SDK; requests are plain HTTP with model name, message list, and
temperature 0. The client enforces a per-host in-flight cap, a timeout,
and bounded retries on 5xx responses.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass

import httpx

from ..catalog import Catalog
from ..dates import DateRange
from ..query import AnalyticsRequest
from .base import BackendInfo, DraftError, SessionHint, UninterpretableIntent
from .frames import IntentFrame, frame_from_json
from .parsing import ParseError, extract_structured
from .prompts import render_field_context, render_query_prompt

REMOTE_URL_ENV = "REMOTE_PLANNER_URL"
REMOTE_TOKEN_ENV = "REMOTE_PLANNER_TOKEN"


class RemoteError(Exception):
    """Transport-level failure talking to the completion endpoint."""


@dataclass
class RemoteConfig:
    url: str
    model: str = "default"
    timeout_seconds: float = 30.0
    retries_on_5xx: int = 2
    max_in_flight: int = 4
    temperature: float = 0.0

    @classmethod
    def from_env(cls, **overrides) -> "RemoteConfig":
        url = overrides.pop("url", None) or os.environ.get(REMOTE_URL_ENV, "")
        if not url:
            raise RemoteError(f"{REMOTE_URL_ENV} is not set")
        return cls(url=url, **overrides)


class ChatCompletionClient:
    def __init__(self, config: RemoteConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._semaphore = threading.Semaphore(config.max_in_flight)
        self._client = httpx.Client(
            timeout=config.timeout_seconds,
            transport=transport,
        )

    def _headers(self) -> dict:
        token = os.environ.get(REMOTE_TOKEN_ENV, "")
        headers = {"Content-Type": "application/json"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, messages: list[dict]) -> str:
        body = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        }
        attempts = self.config.retries_on_5xx + 1
        last_error: Exception | None = None
        with self._semaphore:
            for _ in range(attempts):
                try:
                    response = self._client.post(
                        self.config.url, json=body, headers=self._headers()
                    )
                except httpx.HTTPError as exc:
                    raise RemoteError(f"transport failure: {exc}") from exc
                if response.status_code >= 500:
                    last_error = RemoteError(f"server error {response.status_code}")
                    continue
                if response.status_code != 200:
                    raise RemoteError(f"unexpected status {response.status_code}")
                try:
                    payload = response.json()
                    return payload["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise RemoteError(f"malformed completion payload: {exc}") from exc
        raise last_error or RemoteError("exhausted retries")


_INTENT_PROMPT = """Extract the analytics intent from the user's question as JSON with keys:
metrics (list of metric names), date_expr (object or null), target_phrases
(list of strings), breakdown (list of grain or field names), filters (list
of {field, op, value}), ranking (bool), wants_viz (chart type or null).
Question: %s
"""


class RemotePlanner:
    """PlannerBackend over a chat-completion endpoint."""

    def __init__(self, client: ChatCompletionClient, name: str = "remote"):
        self._client = client
        self.info = BackendInfo(name=name, deterministic=False)

    def parse_intent(self, utterance: str, catalog: Catalog, hint: SessionHint) -> IntentFrame:
        text = self._client.complete(
            [{"role": "user", "content": _INTENT_PROMPT % utterance}]
        )
        try:
            obj = extract_structured(text, "object")
            frame = frame_from_json(obj)
        except (ParseError, ValueError, KeyError, TypeError) as exc:
            raise UninterpretableIntent(f"remote intent output unusable: {exc}") from exc
        if not frame.is_analytics():
            raise UninterpretableIntent("no metric or target in the utterance")
        return frame

    def draft_request(
        self,
        frame: IntentFrame,
        catalog: Catalog,
        date_range: DateRange,
        targets: list[str],
        error_context: str | None = None,
        org: object | None = None,
        utterance: str | None = None,
        field_context: str | None = None,
    ) -> AnalyticsRequest:
        prompt = render_query_prompt(
            field_context or render_field_context(catalog),
            date_range,
            list(targets),
            utterance or ", ".join(frame.metrics),
            error_context=error_context,
        )
        text = self._client.complete([{"role": "user", "content": prompt}])
        try:
            obj = extract_structured(text, "object")
            request = AnalyticsRequest.from_json(obj)
        except ParseError as exc:
            raise DraftError(f"remote draft unparseable: {exc}") from exc
        # The model must not do its own date math; pin the resolved range.
        request.date_range = date_range
        if not request.targets:
            request.targets = list(targets)
        return request
