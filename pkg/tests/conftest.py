"""Shared test doubles and dataset builders."""

from __future__ import annotations

import re
from fractions import Fraction

import pytest

from rate_eval import prompts
from rate_eval.dataset import CandidateTranslation, Direction, Domain, SegmentRecord
from rate_eval.gateways import ChatRequest, ChatResponse

_KIND_MARKERS = (
    ("core", prompts.CORE_SYSTEM.splitlines()[0]),
    ("eval", prompts.EVAL_SYSTEM.splitlines()[0]),
    ("search_queries", prompts.SEARCH_REFORMULATE_SYSTEM.splitlines()[0]),
    ("search_summary", prompts.SEARCH_SUMMARIZE_SYSTEM.splitlines()[0]),
    ("compare", prompts.COMPARE_SYSTEM.splitlines()[0]),
    ("anchor", prompts.ANCHOR_SYSTEM.splitlines()[0]),
    ("gemba_mqm", prompts.GEMBA_MQM_SYSTEM.splitlines()[0]),
)


def prompt_kind(messages) -> str:
    """Which agent prompt family a transcript belongs to."""
    role, content = messages[0]
    if role == "system":
        for kind, marker in _KIND_MARKERS:
            if content.startswith(marker):
                if kind == "anchor":
                    user = messages[1][1]
                    return "anchor_low" if "deliberately poor" in user else "anchor_high"
                return kind
    if role == "user" and content.startswith("Score the following translation"):
        return "gemba_da"
    return "unknown"


def decide_round(messages) -> int:
    match = re.search(r"^Round (\d+) of \d+\.$", messages[-1][1], re.MULTILINE)
    assert match, "not a decide prompt"
    return int(match.group(1))


def candidate_text(messages) -> str:
    match = re.search(r"^Candidate translation \([^)]*\): (.*)$", messages[-1][1], re.MULTILINE)
    assert match, "prompt has no candidate line"
    return match.group(1)


def is_reprompt(messages) -> bool:
    return messages[-1][1] in (prompts.JSON_REMINDER, prompts.CORE_CONSTRAINT_REMINDER)


class PolicyLlm:
    """In-memory chat gateway answering from a policy(kind, messages) callable."""

    def __init__(self, policy):
        self.policy = policy
        self.calls: list[tuple[str, ChatRequest]] = []

    def chat(self, request: ChatRequest) -> ChatResponse:
        kind = prompt_kind(request.messages)
        self.calls.append((kind, request))
        content = self.policy(kind, request.messages)
        if content is None:
            raise AssertionError(f"policy returned no reply for {kind} prompt")
        return ChatResponse(content=content, model_id="policy")

    def count(self, kind: str) -> int:
        return sum(1 for k, _ in self.calls if k == kind)


class QueueLlm:
    """Chat gateway replaying canned responses in order."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls: list[ChatRequest] = []

    def chat(self, request: ChatRequest) -> ChatResponse:
        self.calls.append(request)
        if not self.responses:
            raise AssertionError("QueueLlm exhausted")
        return ChatResponse(content=self.responses.pop(0), model_id="queue")


class FlakyLlm:
    """Injects gateway failures into specific prompt kinds, then recovers."""

    def __init__(self, inner, fail_kind, times, needle=None):
        self.inner = inner
        self.fail_kind = fail_kind
        self.remaining = times
        self.needle = needle

    def chat(self, request: ChatRequest) -> ChatResponse:
        from rate_eval.gateways import GatewayError

        kind = prompt_kind(request.messages)
        transcript = "\n".join(content for _, content in request.messages)
        if (
            kind == self.fail_kind
            and self.remaining > 0
            and (self.needle is None or self.needle in transcript)
        ):
            self.remaining -= 1
            raise GatewayError("transport", "injected failure")
        return self.inner.chat(request)


def make_candidate(system_id, text, scores=(), human_score=None):
    return CandidateTranslation(
        system_id=system_id,
        text=text,
        annotator_scores=tuple(scores),
        human_score=None if human_score is None else Fraction(human_score),
    )


def make_segment(
    seg_id="seg-1",
    domain=Domain.SNS,
    direction=Direction.ZH_EN,
    source="源句带梗",
    reference=None,
    candidates=None,
):
    if candidates is None:
        candidates = (
            make_candidate("sys-a", "translation a", [("ann1", 2), ("ann2", 3)]),
            make_candidate("sys-b", "translation b", [("ann1", 4), ("ann2", 4)]),
        )
    return SegmentRecord(
        id=seg_id,
        domain=domain,
        direction=direction,
        source=source,
        reference=reference,
        candidates=tuple(candidates),
    )


@pytest.fixture
def segment():
    return make_segment()


# --- replay scenario: one source, three candidates ---------------------------------
#
# Candidate 1: unknown slang -> search, then a confident 0 -> finalize.
# Candidate 2: reuses the stored note -> confident 4 -> finalize.
# Candidate 3: two evaluations stay unsure at 2 -> compare against the closest
#              anchor (level 0, tie broken low) -> score kept -> finalize 2.

T1_TEXT = "literal translation one"
T2_TEXT = "adapted translation two"
T3_TEXT = "How ridiculous!"
SEARCH_QUERY = "slang origin"


def make_replay_segment():
    return make_segment(
        seg_id="seg-replay",
        source="这句带梗的话",
        candidates=(
            make_candidate("sys1", T1_TEXT, [("ann1", 0), ("ann2", 0)]),
            make_candidate("sys2", T2_TEXT, [("ann1", 4), ("ann2", 4)]),
            make_candidate("sys3", T3_TEXT, [("ann1", 2), ("ann2", 2)]),
        ),
    )


def replay_search_fixture():
    from rate_eval.gateways import SearchHit

    return {
        SEARCH_QUERY: [
            SearchHit(f"hit {i}", f"snippet {i} about the meme", f"https://example.com/{i}")
            for i in range(3)
        ]
    }


def replay_policy(kind, messages):
    import json as _json

    if kind == "core":
        round_no = decide_round(messages)
        candidate = candidate_text(messages)
        if candidate == T1_TEXT:
            plan = {
                1: {"action": "search", "request": "what the slang in the source means"},
                2: {
                    "action": "evaluate",
                    "instructions": "use the stored note about the slang",
                    "note_refs": [0],
                },
                3: {"action": "finalize", "score": 0},
            }
        elif candidate == T2_TEXT:
            plan = {
                1: {
                    "action": "evaluate",
                    "instructions": "apply the accumulated slang note",
                    "note_refs": [0],
                },
                2: {"action": "finalize", "score": 4},
            }
        else:
            plan = {
                1: {"action": "evaluate", "instructions": "", "note_refs": []},
                2: {
                    "action": "evaluate",
                    "instructions": "confirm the context against the note",
                    "note_refs": [0],
                },
                3: {"action": "compare"},
                4: {"action": "finalize", "score": 2},
            }
        return _json.dumps(plan[round_no])
    if kind == "eval":
        candidate = candidate_text(messages)
        user = messages[-1][1]
        if candidate == T1_TEXT:
            body = {"score": 0, "confidence": 0.95, "rationale": "word-for-word, loses the pun"}
        elif candidate == T2_TEXT:
            body = {"score": 4, "confidence": 0.9, "rationale": "captures the meme naturally"}
        elif "Guidance: (none)" in user:
            body = {
                "score": 2,
                "confidence": 0.4,
                "rationale": "roughly right but unsure",
                "knowledge_gaps": ["the specific nuance of the slang"],
            }
        else:
            body = {"score": 2, "confidence": 0.55, "rationale": "still partially literal"}
        return _json.dumps(body)
    if kind == "search_queries":
        return _json.dumps({"queries": [SEARCH_QUERY]})
    if kind == "search_summary":
        return _json.dumps(
            {"topic": "the slang", "summary": "the phrase is an internet meme about trust"}
        )
    if kind == "compare":
        winner = "A" if f"Translation A: {T3_TEXT}" in messages[-1][1] else "B"
        return _json.dumps({"winner": winner})
    if kind == "anchor_low":
        return _json.dumps({"translation": "a plainly literal rendering"})
    if kind == "anchor_high":
        return _json.dumps({"translation": "a polished idiomatic rendering"})
    raise AssertionError(f"unexpected prompt kind {kind}")


def make_replay_dataset(tmp_path):
    """Replay segment plus a second segment sharing candidate texts."""
    from rate_eval.dataset import save_dataset

    seg_a = make_replay_segment()
    base = make_replay_segment()
    seg_b = make_segment(
        seg_id="seg-second",
        source="另一句带梗的话",
        domain=Domain.CROSS_CULTURE,
        candidates=base.candidates,
    )
    path = tmp_path / "dataset.jsonl"
    save_dataset([seg_a, seg_b], path)
    return path, [seg_a, seg_b]


def record_replay_fixture(tmp_path, records):
    """Run the loop against in-memory policies, capturing a replayable fixture file."""
    from rate_eval.gateways import RecordingLlm, RecordingSearch, ScriptedSearch, write_fixture_file
    from rate_eval.orchestrator import LoopConfig, Orchestrator

    llm = RecordingLlm(PolicyLlm(replay_policy))
    search = RecordingSearch(ScriptedSearch(replay_search_fixture()))
    orchestrator = Orchestrator(llm, search, LoopConfig())
    for record in records:
        orchestrator.evaluate_segment(record)
    fixture_path = tmp_path / "fixtures.jsonl"
    write_fixture_file(fixture_path, chat=llm.recorded, search=search.recorded)
    return fixture_path


# --- acceptance summary: one line per criterion -------------------------------------

_CRITERION_RE = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results: dict[int, tuple[str, str]] = {}
    for outcome, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(outcome, ""):
            if "test_acceptance.py" not in getattr(report, "nodeid", ""):
                continue
            match = _CRITERION_RE.search(report.nodeid)
            if match:
                results[int(match.group(1))] = (label, match.group(2).replace("_", " "))
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            label, title = results[number]
            terminalreporter.write_line(f"criterion {number:2d}: {label} - {title}")
