"""Robust extraction of structured values from model text output."""

from __future__ import annotations

import json
import re

from .base import JudgeVerdict


class ParseError(ValueError):
    """Model output did not contain the expected structure; offset is best-effort."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n(.*?)```", re.DOTALL)
_VERDICT_RE = re.compile(
    r"\*{0,2}\s*verdict\s*\*{0,2}\s*[:=]\s*\*{0,2}\s*`?(correct|incorrect)`?", re.IGNORECASE
)
_REASON_RE = re.compile(
    r"\*{0,2}\s*reason(?:\s*\([^)]*\))?\s*\*{0,2}\s*[:=]\s*(.+)", re.IGNORECASE | re.DOTALL
)


def _strip_fences(text: str) -> str:
    match = _FENCE_RE.search(text)
    return match.group(1) if match else text


def _find_json_object(text: str) -> tuple[str, int]:
    start = text.find("{")
    if start < 0:
        raise ParseError("no JSON object found", offset=0)
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1], start
    raise ParseError("unterminated JSON object", offset=start)


def extract_structured(llm_text: str, expected_schema: str):
    """Pull the expected structure out of free-form model text.

    expected_schema is "object" (outermost JSON object, code fences and
    surrounding prose tolerated) or "verdict" (a Correct/Incorrect line with
    optional reason). Field values are never guessed; anything else raises
    ParseError.
    """
    if not isinstance(llm_text, str) or not llm_text.strip():
        raise ParseError("empty model output", offset=0)

    if expected_schema == "object":
        body = _strip_fences(llm_text)
        blob, offset = _find_json_object(body)
        try:
            value = json.loads(blob)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", offset=offset + exc.pos) from exc
        if not isinstance(value, dict):
            raise ParseError("expected a JSON object", offset=offset)
        return value

    if expected_schema == "verdict":
        match = _VERDICT_RE.search(llm_text)
        if not match:
            raise ParseError("no verdict line found", offset=0)
        verdict = "Correct" if match.group(1).lower() == "correct" else "Incorrect"
        reason = None
        reason_match = _REASON_RE.search(llm_text, match.end())
        if reason_match:
            reason = reason_match.group(1).strip().strip("*").strip() or None
        if verdict == "Correct":
            return JudgeVerdict(verdict="Correct", reason=None)
        if not reason:
            raise ParseError("incorrect verdict without a reason", offset=match.start())
        return JudgeVerdict(verdict="Incorrect", reason=reason)

    raise ParseError(f"unknown expected schema {expected_schema!r}", offset=0)
