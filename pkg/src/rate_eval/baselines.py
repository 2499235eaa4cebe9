"""Reference-free LLM-as-a-judge baselines: direct assessment on a 0-100
scale and error-span annotation with severity-weighted penalty scoring."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from . import prompts
from .agents import AgentError, chat_json
from .gateways import LlmGateway

DEFAULT_MQM_WEIGHTS: Mapping[str, float] = {"Critical": 25.0, "Major": 5.0, "Minor": 1.0}
MQM_FLOOR = -25.0


class Severity(str, Enum):
    CRITICAL = "Critical"
    MAJOR = "Major"
    MINOR = "Minor"


@dataclass(frozen=True)
class MqmError:
    severity: Severity
    category: str
    span: str = ""


class MqmParseError(ValueError):
    """The error listing did not follow the severity-headed format."""


def gemba_da(
    llm: LlmGateway,
    source: str,
    candidate: str,
    source_language: str = "source language",
    target_language: str = "target language",
) -> int:
    """Direct-assessment score in [0, 100] from a single judged prompt."""
    if not source or not candidate:
        raise AgentError("gemba_da: source and candidate must be non-empty")

    def validate(obj: dict) -> int:
        score = obj.get("score")
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ValueError("field 'score' must be a number")
        if score != int(score):
            raise ValueError("field 'score' must be an integer")
        if not 0 <= score <= 100:
            raise ValueError(f"field 'score' value {score} outside [0, 100]")
        return int(score)

    messages = (
        (
            "user",
            prompts.GEMBA_DA_PROMPT.format(
                source_language=source_language,
                target_language=target_language,
                source=source,
                candidate=candidate,
            ),
        ),
    )
    return chat_json(llm, messages, validate)


_HEADER_RE = re.compile(r"^([A-Za-z][A-Za-z ]*):\s*(.*)$")
_ENTRY_RE = re.compile(r'^(.*?)\s+-\s+"(.*)"$')

_SEVERITY_BY_NAME = {s.value.lower(): s for s in Severity}


def parse_mqm_spans(llm_output: str) -> list[MqmError]:
    """Parse a severity-headed error listing into structured errors.

    Sections open with "Critical:", "Major:" or "Minor:"; each following line
    is either "no-error" or an error entry `category - "span"` (the quoted
    span may be absent, e.g. for omissions). Anything else is a parse error
    naming the offending line.
    """
    errors: list[MqmError] = []
    severity: Severity | None = None
    for raw_line in llm_output.splitlines():
        line = raw_line.strip()
        if not line:
            continue
        header = _HEADER_RE.match(line)
        if header and " - " not in header.group(1):
            name = header.group(1).strip().lower()
            if name not in _SEVERITY_BY_NAME:
                raise MqmParseError(f"unknown severity heading in line: {raw_line!r}")
            severity = _SEVERITY_BY_NAME[name]
            line = header.group(2).strip()
            if not line:
                continue
        if severity is None:
            raise MqmParseError(f"error entry before any severity heading: {raw_line!r}")
        if line.lower() in ("no-error", "no-errors"):
            continue
        entry = _ENTRY_RE.match(line)
        if entry:
            category, span = entry.group(1).strip(), entry.group(2)
        else:
            category, span = line, ""
        if not category:
            raise MqmParseError(f"error entry without a category: {raw_line!r}")
        errors.append(MqmError(severity=severity, category=category, span=span))
    return errors


def render_mqm_listing(errors: Sequence[MqmError]) -> str:
    """Inverse of parse_mqm_spans for synthetic listings."""
    sections = []
    for severity in Severity:
        lines = [f"{severity.value}:"]
        entries = [e for e in errors if e.severity is severity]
        if entries:
            lines.extend(f'{e.category} - "{e.span}"' for e in entries)
        else:
            lines.append("no-error")
        sections.append("\n".join(lines))
    return "\n".join(sections)


def mqm_score(
    errors: Sequence[MqmError],
    weights: Mapping[str, float] = DEFAULT_MQM_WEIGHTS,
    floor: float = MQM_FLOOR,
) -> float:
    """Negative severity-weighted error total, floored (default at -25)."""
    total = sum(weights[e.severity.value] for e in errors)
    return max(-total, floor)


def gemba_mqm(
    llm: LlmGateway,
    source: str,
    candidate: str,
    source_language: str = "source language",
    target_language: str = "target language",
) -> tuple[float, list[MqmError]]:
    """End-to-end error-span baseline: prompt, parse the listing, score it."""
    if not source or not candidate:
        raise AgentError("gemba_mqm: source and candidate must be non-empty")
    from .gateways import ChatRequest

    messages = (
        ("system", prompts.GEMBA_MQM_SYSTEM),
        (
            "user",
            prompts.GEMBA_MQM_USER.format(
                source_language=source_language,
                target_language=target_language,
                source=source,
                candidate=candidate,
            ),
        ),
    )
    response = llm.chat(ChatRequest(messages=messages))
    try:
        errors = parse_mqm_spans(response.content)
    except MqmParseError:
        retry_messages = messages + (
            ("assistant", response.content),
            (
                "user",
                "Your previous reply did not follow the required layout. Answer again "
                "using exactly the Critical:/Major:/Minor: sections described above.",
            ),
        )
        retry = llm.chat(ChatRequest(messages=retry_messages))
        try:
            errors = parse_mqm_spans(retry.content)
        except MqmParseError as exc:
            raise AgentError(f"unparseable error listing after reprompt: {exc}") from exc
    return mqm_score(errors), errors
