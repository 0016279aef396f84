"""HTTP surface: chat, governed analytics, target search, fields, audit.

Handler errors map to structured JSON bodies; stack traces, prompt text,
and record values never appear in error responses. Per-session turn
serialization lives in the orchestrator; handlers themselves are
concurrency-safe.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict

from fastapi import Depends, FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse

from ..orchestrator import InMemorySessionStore, Orchestrator, export_audit_jsonl
from ..planner.prompts import render_field_context
from ..planner.remote import (
    REMOTE_URL_ENV,
    ChatCompletionClient,
    RemoteConfig,
    RemotePlanner,
)
from ..planner.rule import RulePlanner
from ..query import AnalyticsRequest, ValidationError, validate
from ..store import AnalyticsStore, EndpointError, PermissionDenied, load_dataset
from ..targets import Ambiguous, Denied, NotFound, Resolved, resolve_targets
from .cache import FieldDefCache
from .config import ServiceConfig

logger = logging.getLogger(__name__)


class AuthError(Exception):
    def __init__(self, status_code: int, detail: str):
        self.status_code = status_code
        self.detail = detail


def _build_planner(config: ServiceConfig):
    if config.planner_backend == "remote":
        remote = RemoteConfig(
            url=config.remote.url or os.environ.get(REMOTE_URL_ENV, ""),
            model=config.remote.model,
            timeout_seconds=config.remote.timeout_seconds,
            retries_on_5xx=config.remote.retries_on_5xx,
            max_in_flight=config.remote.max_in_flight,
        )
        return RemotePlanner(ChatCompletionClient(remote))
    return RulePlanner()


def create_app(config: ServiceConfig, dataset=None) -> FastAPI:
    """Assemble the service; `dataset` overrides bundle loading in tests."""
    if dataset is None:
        dataset = load_dataset(config.bundle_path)
    store = AnalyticsStore(dataset)
    sessions = InMemorySessionStore(ttl_seconds=config.session_ttl_seconds)
    orchestrator = Orchestrator(
        store=store,
        planner=_build_planner(config),
        sessions=sessions,
        tz=config.tz,
    )
    cache = FieldDefCache(ttl_seconds=config.cache_ttl_seconds, enabled=config.cache_enabled)

    app = FastAPI(title="querydesk", docs_url=None, redoc_url=None)
    # The browser UI is served separately; auth still gates every endpoint.
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store
    app.state.orchestrator = orchestrator
    app.state.cache = cache
    app.state.config = config

    def principal_for(request: Request):
        if config.auth_mode == "open":
            return config.open_principal.build(store.org)
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise AuthError(401, "missing bearer token")
        token = header[7:].strip()
        spec = config.tokens.get(token)
        if spec is None:
            raise AuthError(401, "unknown token")
        return spec.build(store.org)

    @app.exception_handler(AuthError)
    async def _auth_error(request: Request, exc: AuthError):
        return JSONResponse(
            status_code=exc.status_code,
            content={"error": {"kind": "Auth", "detail": exc.detail}},
        )

    @app.exception_handler(Exception)
    async def _internal_error(request: Request, exc: Exception):
        logger.exception("handler failure")
        return JSONResponse(
            status_code=500,
            content={"error": {"kind": "Internal", "detail": "internal error"}},
        )

    @app.post("/v1/chat/{session_id}")
    async def chat(session_id: str, body: dict, principal=Depends(principal_for)):
        utterance = str(body.get("utterance", "")).strip()
        if not utterance:
            return JSONResponse(
                status_code=422,
                content={"error": {"kind": "EmptyUtterance", "detail": "utterance is required"}},
            )
        session = sessions.get_or_create(session_id, principal, tz=config.tz)
        session, response = orchestrator.handle_turn(session, utterance)
        return response.to_json()

    @app.get("/v1/fields")
    async def fields(principal=Depends(principal_for)):
        catalog = store.catalog
        context = cache.get_or_render(
            store.dataset.tenant_id,
            catalog.version(),
            lambda: render_field_context(catalog),
        )
        return {"fields": catalog.to_json(), "context": context}

    @app.post("/v1/analytics/{endpoint}")
    async def analytics(endpoint: str, body: dict, principal=Depends(principal_for)):
        request = AnalyticsRequest.from_json({"endpoint": endpoint, "request_body": body})
        validated = validate(request, store.catalog)
        if isinstance(validated, ValidationError):
            return JSONResponse(status_code=422, content={"error": validated.to_json()})
        try:
            result = store.execute(validated, principal)
        except PermissionDenied:
            # Audit the refusal against an addressable synthetic session.
            session = sessions.get_or_create(f"api-{principal.user_id}", principal, tz=config.tz)
            orchestrator._audit(session, "Query", "denied", f"raw {endpoint} request denied")
            return JSONResponse(
                status_code=403,
                content={"error": {"kind": "PermissionDenied",
                                   "detail": "a requested target is not permitted"}},
            )
        except EndpointError as exc:
            return JSONResponse(
                status_code=502 if exc.retriable else 400,
                content={"error": {"kind": "EndpointError", "detail": "execution failed"}},
            )
        return result.to_json()

    @app.get("/v1/targets/search")
    async def target_search(q: str = "", principal=Depends(principal_for)):
        if not q.strip():
            return JSONResponse(
                status_code=422,
                content={"error": {"kind": "EmptyQuery", "detail": "q is required"}},
            )
        outcome = resolve_targets(q, store.org, principal)
        if isinstance(outcome, Resolved):
            return {"outcome": "resolved", "ids": list(outcome.ids)}
        if isinstance(outcome, Ambiguous):
            return {"outcome": "ambiguous", "candidates": [asdict(c) for c in outcome.candidates]}
        if isinstance(outcome, Denied):
            return {"outcome": "denied", "name": outcome.name}
        return {"outcome": "not_found"}

    @app.get("/v1/audit/{session_id}")
    async def audit(session_id: str, principal=Depends(principal_for)):
        session = sessions.get(session_id)
        if session is None or session.principal.user_id != principal.user_id:
            return JSONResponse(
                status_code=404,
                content={"error": {"kind": "UnknownSession", "detail": "no such session"}},
            )
        return PlainTextResponse(export_audit_jsonl(session), media_type="application/x-ndjson")

    return app
