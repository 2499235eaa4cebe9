"""The three functional sub-agents: pointwise evaluation, knowledge search,
and pairwise comparison with anchor-based score calibration.

Every agent speaks plain text to the chat gateway and expects the reply to
end in a JSON object; the parser takes the last well-formed object in the
response. One reprompt with a format reminder is attempted before giving up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

from . import prompts
from .gateways import ChatRequest, LlmGateway, Message, SearchGateway, SearchHit

MAX_SEARCH_QUERIES = 3
SEARCH_TOP_K = 5

NOTHING_FOUND_SUMMARY = "No relevant information was found for: {request}"


class AgentError(RuntimeError):
    """Unrecoverable sub-agent failure (bad output after reprompt, bad input)."""


@dataclass(frozen=True)
class Verdict:
    score: int
    confidence: float
    rationale: str = ""
    error_spans: tuple[tuple[str, str], ...] = ()
    knowledge_gaps: tuple[str, ...] = ()


@dataclass(frozen=True)
class KnowledgeNote:
    topic: str
    summary: str
    sources: tuple[str, ...] = ()


class ComparisonOutcome(Enum):
    WIN = "Win"
    TIE = "Tie"
    LOSE = "Lose"

    def inverted(self) -> "ComparisonOutcome":
        if self is ComparisonOutcome.WIN:
            return ComparisonOutcome.LOSE
        if self is ComparisonOutcome.LOSE:
            return ComparisonOutcome.WIN
        return ComparisonOutcome.TIE


_OUTCOME_ORDER = {
    ComparisonOutcome.WIN: 0,
    ComparisonOutcome.TIE: 1,
    ComparisonOutcome.LOSE: 2,
}


@dataclass(frozen=True)
class BidirectionalResult:
    """Unordered pair of outcomes from the two position-swapped comparisons."""

    outcomes: tuple[ComparisonOutcome, ComparisonOutcome]

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.outcomes, key=_OUTCOME_ORDER.__getitem__))
        object.__setattr__(self, "outcomes", ordered)


@dataclass(frozen=True)
class Anchor:
    text: str
    score: float


@dataclass(frozen=True)
class AnchorSet:
    """Score-level anchor slots; at most one anchor per integer level 0..4."""

    slots: Mapping[int, Anchor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for level, anchor in self.slots.items():
            if level not in range(5):
                raise ValueError(f"AnchorSet: invalid level {level}")
            if round(anchor.score) != level:
                raise ValueError(
                    f"AnchorSet: score {anchor.score} does not round to level {level}"
                )

    @property
    def empty(self) -> bool:
        return not self.slots

    def levels(self) -> tuple[int, ...]:
        return tuple(sorted(self.slots))


# --- structured output parsing -------------------------------------------------


def last_json_object(text: str) -> dict | None:
    """The last well-formed top-level JSON object embedded in `text`."""
    spans: list[tuple[int, int]] = []
    depth = 0
    start = None
    in_str = False
    escaped = False
    for i, ch in enumerate(text):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"' and depth > 0:
            in_str = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0 and start is not None:
                spans.append((start, i + 1))
                start = None
    for s, e in reversed(spans):
        try:
            obj = json.loads(text[s:e])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def chat_json(
    llm: LlmGateway,
    messages: Sequence[Message],
    validate: Callable[[dict], object],
    reminder: str = prompts.JSON_REMINDER,
    temperature: float = 0.0,
):
    """One chat call expecting a JSON object; one reprompt on a bad reply."""
    request = ChatRequest(messages=tuple(messages), temperature=temperature)
    response = llm.chat(request)
    first_error: Exception | None = None
    obj = last_json_object(response.content)
    if obj is None:
        first_error = AgentError("reply contained no JSON object")
    else:
        try:
            return validate(obj)
        except (ValueError, TypeError, KeyError) as exc:
            first_error = exc
    retry_messages = tuple(messages) + (
        ("assistant", response.content),
        ("user", reminder),
    )
    retry = llm.chat(ChatRequest(messages=retry_messages, temperature=temperature))
    obj = last_json_object(retry.content)
    if obj is not None:
        try:
            return validate(obj)
        except (ValueError, TypeError, KeyError) as exc:
            raise AgentError(f"invalid reply after reprompt: {exc}") from exc
    raise AgentError(f"unparseable reply after reprompt ({first_error})")


def _require_number(obj: Mapping, key: str, lo: float, hi: float) -> float:
    value = obj.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"field {key!r} must be a number")
    if not lo <= value <= hi:
        raise ValueError(f"field {key!r} value {value} outside [{lo}, {hi}]")
    return float(value)


def format_notes(notes: Sequence[KnowledgeNote]) -> str:
    if not notes:
        return "(none)"
    lines = []
    for note in notes:
        sources = f" [sources: {', '.join(note.sources)}]" if note.sources else ""
        lines.append(f"- {note.topic}: {note.summary}{sources}")
    return "\n".join(lines)


# --- evaluation agent ----------------------------------------------------------


def _parse_verdict(obj: Mapping) -> Verdict:
    score = _require_number(obj, "score", 0, 4)
    if score != int(score):
        raise ValueError("field 'score' must be an integer")
    confidence = _require_number(obj, "confidence", 0, 1)
    rationale = obj.get("rationale", "")
    if not isinstance(rationale, str):
        raise ValueError("field 'rationale' must be a string")
    spans: list[tuple[str, str]] = []
    for entry in obj.get("error_spans", []) or []:
        if not isinstance(entry, Mapping):
            raise ValueError("field 'error_spans' entries must be objects")
        spans.append((str(entry.get("span", "")), str(entry.get("note", ""))))
    gaps = obj.get("knowledge_gaps", []) or []
    if not isinstance(gaps, list) or any(not isinstance(g, str) for g in gaps):
        raise ValueError("field 'knowledge_gaps' must be a list of strings")
    return Verdict(
        score=int(score),
        confidence=confidence,
        rationale=rationale,
        error_spans=tuple(spans),
        knowledge_gaps=tuple(gaps),
    )


def evaluate_pointwise(
    llm: LlmGateway,
    source: str,
    candidate: str,
    instructions: str = "",
    notes: Sequence[KnowledgeNote] = (),
    source_language: str = "source language",
    target_language: str = "target language",
) -> Verdict:
    """Pointwise 0-4 assessment with optional guidance and knowledge notes."""
    if not source or not candidate:
        raise AgentError("evaluate_pointwise: source and candidate must be non-empty")
    messages = (
        ("system", prompts.EVAL_SYSTEM),
        (
            "user",
            prompts.EVAL_USER.format(
                source_language=source_language,
                target_language=target_language,
                source=source,
                candidate=candidate,
                instructions=instructions or "(none)",
                notes=format_notes(notes),
            ),
        ),
    )
    return chat_json(llm, messages, _parse_verdict)


# --- search agent ---------------------------------------------------------------


def _parse_queries(obj: Mapping) -> list[str]:
    queries = obj.get("queries")
    if not isinstance(queries, list) or any(not isinstance(q, str) for q in queries):
        raise ValueError("field 'queries' must be a list of strings")
    return [q for q in queries if q.strip()]


def _parse_note_body(obj: Mapping) -> tuple[str, str]:
    topic = obj.get("topic", "")
    summary = obj.get("summary")
    if not isinstance(summary, str) or not summary:
        raise ValueError("field 'summary' must be a non-empty string")
    if not isinstance(topic, str):
        raise ValueError("field 'topic' must be a string")
    return topic, summary


def run_search(llm: LlmGateway, search: SearchGateway, request: str) -> KnowledgeNote:
    """Reformulate a knowledge request, search, and summarize the results.

    At most MAX_SEARCH_QUERIES queries are issued and the first SEARCH_TOP_K
    hits feed the summarization call. Finding nothing is not an error: the
    note then has empty sources and says so.
    """
    if not request:
        raise AgentError("run_search: request must be non-empty")
    messages = (
        ("system", prompts.SEARCH_REFORMULATE_SYSTEM.format(max_queries=MAX_SEARCH_QUERIES)),
        ("user", prompts.SEARCH_REFORMULATE_USER.format(request=request)),
    )
    queries = chat_json(llm, messages, _parse_queries)[:MAX_SEARCH_QUERIES]
    if not queries:
        queries = [request]
    hits: list[SearchHit] = []
    for query in queries:
        hits.extend(search.search(query, SEARCH_TOP_K))
    hits = hits[:SEARCH_TOP_K]
    if not hits:
        return KnowledgeNote(
            topic=request,
            summary=NOTHING_FOUND_SUMMARY.format(request=request),
            sources=(),
        )
    snippets = "\n".join(
        f"{i + 1}. {hit.title}: {hit.snippet} ({hit.url})" for i, hit in enumerate(hits)
    )
    messages = (
        ("system", prompts.SEARCH_SUMMARIZE_SYSTEM),
        ("user", prompts.SEARCH_SUMMARIZE_USER.format(request=request, snippets=snippets)),
    )
    topic, summary = chat_json(llm, messages, _parse_note_body)
    return KnowledgeNote(
        topic=topic or request,
        summary=summary,
        sources=tuple(hit.url for hit in hits),
    )


# --- comparison agent ------------------------------------------------------------


def _parse_winner(obj: Mapping) -> ComparisonOutcome:
    winner = obj.get("winner")
    if not isinstance(winner, str):
        raise ValueError("field 'winner' must be a string")
    normalized = winner.strip().lower()
    if normalized == "a":
        return ComparisonOutcome.WIN
    if normalized == "b":
        return ComparisonOutcome.LOSE
    if normalized == "tie":
        return ComparisonOutcome.TIE
    raise ValueError(f"field 'winner' value {winner!r} not one of A/B/tie")


def compare_once(
    llm: LlmGateway,
    source: str,
    a: str,
    b: str,
    notes: Sequence[KnowledgeNote] = (),
) -> ComparisonOutcome:
    """Outcome for translation `a` relative to translation `b`."""
    if not a or not b:
        raise AgentError("compare_once: both translations must be non-empty")
    messages = (
        ("system", prompts.COMPARE_SYSTEM),
        (
            "user",
            prompts.COMPARE_USER.format(source=source, a=a, b=b, notes=format_notes(notes)),
        ),
    )
    return chat_json(llm, messages, _parse_winner)


def compare_bidirectional(
    llm: LlmGateway,
    source: str,
    candidate: str,
    anchor: str,
    notes: Sequence[KnowledgeNote] = (),
) -> BidirectionalResult:
    """Two position-swapped comparisons, both expressed candidate-relative."""
    first = compare_once(llm, source, candidate, anchor, notes)
    second_for_anchor = compare_once(llm, source, anchor, candidate, notes)
    return BidirectionalResult(outcomes=(first, second_for_anchor.inverted()))


def calibrate(tentative: float, anchor_score: float, result: BidirectionalResult) -> float:
    """Adjust a tentative score against an anchor per the comparison outcome pair.

    Consistent wins upgrade by 1.0 and a win plus a tie by 0.5, but only when
    the tentative score does not already exceed the anchor's; a loss plus a
    tie downgrades by 0.5 and consistent losses by 1.0 unconditionally; mixed
    or all-tie outcomes leave the score unchanged. The result is clamped to
    [0, 4].
    """
    win, tie, lose = ComparisonOutcome.WIN, ComparisonOutcome.TIE, ComparisonOutcome.LOSE
    pair = result.outcomes
    if pair == (win, win):
        delta = 1.0 if tentative <= anchor_score else 0.0
    elif pair == (win, tie):
        delta = 0.5 if tentative <= anchor_score else 0.0
    elif pair in ((tie, tie), (win, lose)):
        delta = 0.0
    elif pair == (tie, lose):
        delta = -0.5
    else:  # (lose, lose)
        delta = -1.0
    return min(4.0, max(0.0, tentative + delta))


# --- anchor memory ----------------------------------------------------------------


def select_anchor(anchors: AnchorSet, tentative: float) -> tuple[int, Anchor]:
    """Occupied slot whose stored score is closest to the tentative score.

    Distance ties break toward the lower level.
    """
    if anchors.empty:
        raise AgentError("select_anchor: anchor set is empty")
    best_level = min(
        anchors.slots,
        key=lambda level: (abs(anchors.slots[level].score - tentative), level),
    )
    return best_level, anchors.slots[best_level]


def _parse_translation(obj: Mapping) -> str:
    text = obj.get("translation")
    if not isinstance(text, str) or not text:
        raise ValueError("field 'translation' must be a non-empty string")
    return text


def bootstrap_anchors(
    llm: LlmGateway,
    source: str,
    notes: Sequence[KnowledgeNote] = (),
    existing: AnchorSet | None = None,
) -> AnchorSet:
    """Cold-start anchor pool: synthetic level-1 and level-4 translations.

    Only legal while the anchor memory is still empty.
    """
    if existing is not None and not existing.empty:
        raise AgentError("bootstrap_anchors: anchor set already populated")
    low = chat_json(
        llm,
        (
            ("system", prompts.ANCHOR_SYSTEM),
            ("user", prompts.ANCHOR_LOW_USER.format(source=source)),
        ),
        _parse_translation,
    )
    high = chat_json(
        llm,
        (
            ("system", prompts.ANCHOR_SYSTEM),
            ("user", prompts.ANCHOR_HIGH_USER.format(source=source, notes=format_notes(notes))),
        ),
        _parse_translation,
    )
    return AnchorSet(slots={1: Anchor(low, 1.0), 4: Anchor(high, 4.0)})


def update_anchor_slot(anchors: AnchorSet, finalized: tuple[str, float]) -> AnchorSet:
    """Store a finalized translation in the slot its score rounds to (half-to-even)."""
    text, score = finalized
    if not 0 <= score <= 4:
        raise ValueError(f"update_anchor_slot: score {score} outside [0, 4]")
    level = round(score)
    slots = dict(anchors.slots)
    slots[level] = Anchor(text, float(score))
    return AnchorSet(slots=slots)
