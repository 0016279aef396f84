"""Inbound prompt-injection screening and outbound leak detection.

The refusal text is fixed and never quotes the guarded content. Every
prompt template embeds SENTINEL; any outbound text containing it is
withheld, so template leakage is detectable rather than silent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

# Unique marker baked into every prompt template (see prompts.py).
SENTINEL = "[[QDESK-PROMPT-SENTINEL-93b1c7]]"

REFUSAL_TEXT = (
    "I can't help with that. I can answer analytics questions about data "
    "you have access to."
)

_INJECTION_PATTERNS: list[tuple[re.Pattern, str]] = [
    (re.compile(r"ignore\s+(all\s+|the\s+|your\s+)?(previous|prior|above|earlier)\s+instructions", re.I),
     "instruction override attempt"),
    (re.compile(r"system\s+prompt", re.I), "system prompt request"),
    (re.compile(r"(hidden|internal|secret)\s+(tool|instruction|prompt|config)", re.I),
     "hidden internals request"),
    (re.compile(r"tool\s+schemas?", re.I), "tool schema request"),
    (re.compile(r"(reveal|show|print|dump|expose|output|repeat)\b.{0,40}\b(prompt|instructions|configuration)", re.I),
     "internals disclosure request"),
    (re.compile(r"developer\s+mode|jailbreak|dan\s+mode", re.I), "persona override attempt"),
    (re.compile(r"(other|another|different|every)\s+tenant", re.I), "cross-tenant request"),
    (re.compile(r"not\s+(allowed|permitted|authorized)\s+to\s+(see|access|view|query)", re.I),
     "scope probing"),
    (re.compile(r"(bypass|disable|skip|turn\s+off|remove)\b.{0,30}\b(permission|governance|security|mask|guardrail)", re.I),
     "control bypass attempt"),
    (re.compile(r"pretend\s+(you\s+are|to\s+be)", re.I), "persona override attempt"),
    (re.compile(re.escape(SENTINEL)), "sentinel probing"),
]


@dataclass(frozen=True)
class GuardrailDecision:
    allowed: bool
    reason: str | None = None


def apply_guardrails(text: str) -> GuardrailDecision:
    """Screen an inbound utterance; refusal reasons name the pattern class only."""
    for pattern, reason in _INJECTION_PATTERNS:
        if pattern.search(text or ""):
            return GuardrailDecision(allowed=False, reason=reason)
    return GuardrailDecision(allowed=True)


def scan_outbound(text: str) -> bool:
    """True when outbound text is tainted with prompt-template internals."""
    return SENTINEL in (text or "")
