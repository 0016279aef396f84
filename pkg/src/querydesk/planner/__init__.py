"""Planning backends: intent parsing, request drafting, charting, judging.

Every backend implements the same small interface so the orchestrator can
run identically against the deterministic rule backend (used in CI) or a
remote chat-completion endpoint.
"""

from .base import BackendInfo, DraftError, JudgeUnavailable, SessionHint, UninterpretableIntent
from .frames import IntentFrame
from .guardrails import REFUSAL_TEXT, SENTINEL, apply_guardrails, scan_outbound
from .judge import CaseAnswer, JudgeVerdict, OracleJudge, RemoteJudge
from .parsing import ParseError, extract_structured
from .rule import RulePlanner
from .remote import ChatCompletionClient, RemoteConfig, RemotePlanner

__all__ = [
    "BackendInfo",
    "CaseAnswer",
    "ChatCompletionClient",
    "DraftError",
    "IntentFrame",
    "JudgeUnavailable",
    "JudgeVerdict",
    "OracleJudge",
    "ParseError",
    "REFUSAL_TEXT",
    "RemoteConfig",
    "RemotePlanner",
    "RulePlanner",
    "SENTINEL",
    "SessionHint",
    "UninterpretableIntent",
    "apply_guardrails",
    "extract_structured",
    "scan_outbound",
]
