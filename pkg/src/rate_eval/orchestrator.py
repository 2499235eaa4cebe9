"""The core controller: a reflective decide/execute loop over the sub-agents.

Each candidate translation is scored by iterating rounds of one action each
(search, evaluate, compare, or finalize). Knowledge notes and the anchor
pool are segment-level state shared by all candidates of one source; every
other piece of state is per-candidate. Sub-agent failures restart the
candidate's loop from round 1 (re-initiation) a bounded number of times
before a failure record is written.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import prompts
from .agents import (
    AgentError,
    AnchorSet,
    KnowledgeNote,
    bootstrap_anchors,
    calibrate,
    compare_bidirectional,
    evaluate_pointwise,
    run_search,
    select_anchor,
    update_anchor_slot,
)
from .dataset import CandidateTranslation, SegmentRecord
from .gateways import GatewayError, LlmGateway, SearchGateway
from .agents import chat_json


@dataclass(frozen=True)
class LoopConfig:
    max_rounds: int = 10
    no_search: bool = False
    no_compare: bool = False
    reinit_budget: int = 2

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("LoopConfig: max_rounds must be >= 1")
        if self.reinit_budget < 0:
            raise ValueError("LoopConfig: reinit_budget must be >= 0")


class SegmentMemory:
    """Append-only knowledge notes plus the search requests that produced them."""

    def __init__(self) -> None:
        self.notes: list[KnowledgeNote] = []
        self._request_index: dict[str, int] = {}

    def index_for_request(self, request: str) -> int | None:
        return self._request_index.get(request)

    def add(self, request: str, note: KnowledgeNote) -> int:
        self.notes.append(note)
        index = len(self.notes) - 1
        self._request_index[request] = index
        return index


@dataclass
class SegmentContext:
    """Segment-level state shared across candidates of one source."""

    memory: SegmentMemory = field(default_factory=SegmentMemory)
    anchors: AnchorSet = field(default_factory=AnchorSet)


@dataclass
class Tentative:
    score: float
    confidence: float


@dataclass
class OrchestratorState:
    round: int = 1
    tentative: Tentative | None = None
    action_log: list[tuple[dict, str]] = field(default_factory=list)

    def digest(self, memory: SegmentMemory, anchors: AnchorSet) -> dict:
        return {
            "round": self.round,
            "memory": len(memory.notes),
            "tentative": None
            if self.tentative is None
            else [self.tentative.score, self.tentative.confidence],
            "anchor_levels": list(anchors.levels()),
        }


@dataclass(frozen=True)
class RoundRecord:
    round: int
    state: dict
    action: dict
    result: str


@dataclass(frozen=True)
class Trajectory:
    segment_id: str
    system_id: str
    rounds: tuple[RoundRecord, ...]
    final_score: float | None
    reinitiations: int = 0
    failure: str | None = None

    def to_dict(self) -> dict:
        return {
            "segment_id": self.segment_id,
            "system_id": self.system_id,
            "reinitiations": self.reinitiations,
            "rounds": [
                {"round": r.round, "state": r.state, "action": r.action, "result": r.result}
                for r in self.rounds
            ],
            "final_score": self.final_score,
            "failure": self.failure,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Trajectory":
        return cls(
            segment_id=obj["segment_id"],
            system_id=obj["system_id"],
            reinitiations=obj.get("reinitiations", 0),
            rounds=tuple(
                RoundRecord(r["round"], r["state"], r["action"], r["result"])
                for r in obj.get("rounds", [])
            ),
            final_score=obj.get("final_score"),
            failure=obj.get("failure"),
        )


def write_trajectories(trajectories: Iterable[Trajectory], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for trajectory in trajectories:
            fh.write(json.dumps(trajectory.to_dict(), ensure_ascii=False) + "\n")


def read_trajectories(path: str | Path) -> list[Trajectory]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            out.append(Trajectory.from_dict(json.loads(line)))
    return out


def _fmt(value: float) -> str:
    return f"{value:g}"


class Orchestrator:
    def __init__(self, llm: LlmGateway, search: SearchGateway, config: LoopConfig = LoopConfig()):
        self.llm = llm
        self.search = search
        self.config = config

    # --- decision step ---------------------------------------------------------

    def _menu(self) -> list[str]:
        menu = []
        if not self.config.no_search:
            menu.append(prompts.MENU_SEARCH)
        menu.append(prompts.MENU_EVALUATE)
        if not self.config.no_compare:
            menu.append(prompts.MENU_COMPARE)
        menu.append(prompts.MENU_FINALIZE)
        return menu

    def _decide_prompt(
        self,
        state: OrchestratorState,
        ctx: SegmentContext,
        segment: SegmentRecord,
        candidate: CandidateTranslation,
    ) -> tuple[tuple[str, str], ...]:
        memory_lines = (
            "\n".join(
                f"[{i}] {note.topic}: {note.summary}" for i, note in enumerate(ctx.memory.notes)
            )
            or "(empty)"
        )
        anchor_lines = (
            ", ".join(
                f"level {level} (score {_fmt(ctx.anchors.slots[level].score)})"
                for level in ctx.anchors.levels()
            )
            or "(empty)"
        )
        history = (
            "\n".join(
                f"{i + 1}. {action['kind']} -> {result}"
                for i, (action, result) in enumerate(state.action_log)
            )
            or "(none)"
        )
        tentative = (
            "none yet"
            if state.tentative is None
            else f"{_fmt(state.tentative.score)} (confidence {_fmt(state.tentative.confidence)})"
        )
        user = prompts.CORE_DECIDE.format(
            source_language=segment.direction.source_language,
            target_language=segment.direction.target_language,
            source=segment.source,
            candidate=candidate.text,
            round=state.round,
            max_rounds=self.config.max_rounds,
            tentative=tentative,
            memory=memory_lines,
            anchors=anchor_lines,
            history=history,
            menu="\n".join(self._menu()),
        )
        return (("system", prompts.CORE_SYSTEM), ("user", user))

    def decide_next_action(
        self,
        state: OrchestratorState,
        ctx: SegmentContext,
        segment: SegmentRecord,
        candidate: CandidateTranslation,
    ) -> dict:
        """One parsed, legality-checked action decision from the controller LLM."""
        allowed = {"evaluate", "finalize"}
        if not self.config.no_search:
            allowed.add("search")
        if not self.config.no_compare:
            allowed.add("compare")

        def validate(obj: dict) -> dict:
            kind = obj.get("action")
            if not isinstance(kind, str) or kind.lower() not in allowed:
                raise ValueError(f"action {kind!r} is not available")
            kind = kind.lower()
            if kind == "search":
                request = obj.get("request")
                if not isinstance(request, str) or not request.strip():
                    raise ValueError("search needs a non-empty 'request'")
                return {"kind": "search", "request": request.strip()}
            if kind == "evaluate":
                instructions = obj.get("instructions", "")
                if not isinstance(instructions, str):
                    raise ValueError("'instructions' must be a string")
                refs = obj.get("note_refs", []) or []
                if not isinstance(refs, list) or any(
                    isinstance(r, bool) or not isinstance(r, int) for r in refs
                ):
                    raise ValueError("'note_refs' must be a list of integers")
                refs = [r for r in refs if 0 <= r < len(ctx.memory.notes)]
                return {"kind": "evaluate", "instructions": instructions, "note_refs": refs}
            if kind == "compare":
                if state.round == 1:
                    raise ValueError("compare is not allowed in round 1")
                if state.tentative is None:
                    raise ValueError("compare requires a tentative score")
                level = obj.get("anchor_level")
                if level is not None and (
                    isinstance(level, bool) or not isinstance(level, int) or not 0 <= level <= 4
                ):
                    raise ValueError("'anchor_level' must be an integer in 0..4")
                return {"kind": "compare", "anchor_level": level}
            # finalize
            if state.tentative is None:
                raise ValueError("finalize requires a tentative score")
            score = obj.get("score", state.tentative.score)
            if isinstance(score, bool) or not isinstance(score, (int, float)):
                raise ValueError("'score' must be a number")
            if not 0 <= score <= 4:
                raise ValueError(f"'score' {score} outside [0, 4]")
            return {"kind": "finalize", "score": float(score)}

        messages = self._decide_prompt(state, ctx, segment, candidate)
        return chat_json(self.llm, messages, validate, reminder=prompts.CORE_CONSTRAINT_REMINDER)

    # --- action execution -------------------------------------------------------

    def _execute_search(self, action: dict, ctx: SegmentContext, state: OrchestratorState) -> str:
        request = action["request"]
        cached_index = ctx.memory.index_for_request(request)
        if cached_index is not None:
            note = ctx.memory.notes[cached_index]
            return f"note[{cached_index}] {note.topic} (cached)"
        note = run_search(self.llm, self.search, request)
        index = ctx.memory.add(request, note)
        return f"note[{index}] {note.topic}"

    def _execute_evaluate(
        self,
        action: dict,
        ctx: SegmentContext,
        state: OrchestratorState,
        segment: SegmentRecord,
        candidate: CandidateTranslation,
    ) -> str:
        notes = [ctx.memory.notes[i] for i in action["note_refs"]]
        verdict = evaluate_pointwise(
            self.llm,
            segment.source,
            candidate.text,
            instructions=action["instructions"],
            notes=notes,
            source_language=segment.direction.source_language,
            target_language=segment.direction.target_language,
        )
        state.tentative = Tentative(float(verdict.score), verdict.confidence)
        digest = f"score {verdict.score} confidence {_fmt(verdict.confidence)}"
        if verdict.knowledge_gaps:
            digest += f"; gaps: {', '.join(verdict.knowledge_gaps)}"
        return digest

    def _execute_compare(
        self,
        action: dict,
        ctx: SegmentContext,
        state: OrchestratorState,
        segment: SegmentRecord,
        candidate: CandidateTranslation,
    ) -> str:
        assert state.tentative is not None
        prefix = ""
        if ctx.anchors.empty:
            ctx.anchors = bootstrap_anchors(
                self.llm, segment.source, ctx.memory.notes, existing=ctx.anchors
            )
            prefix = "bootstrapped anchors; "
        level = action.get("anchor_level")
        if level is not None and level in ctx.anchors.slots:
            anchor = ctx.anchors.slots[level]
        else:
            level, anchor = select_anchor(ctx.anchors, state.tentative.score)
        result = compare_bidirectional(
            self.llm, segment.source, candidate.text, anchor.text, notes=ctx.memory.notes
        )
        old = state.tentative.score
        new = calibrate(old, anchor.score, result)
        state.tentative = Tentative(new, state.tentative.confidence)
        outcomes = "/".join(o.value for o in result.outcomes)
        return (
            f"{prefix}vs level {level} (score {_fmt(anchor.score)}): "
            f"{outcomes}; tentative {_fmt(old)} -> {_fmt(new)}"
        )

    def _execute_finalize(
        self,
        action: dict,
        ctx: SegmentContext,
        candidate: CandidateTranslation,
    ) -> str:
        score = action["score"]
        ctx.anchors = update_anchor_slot(ctx.anchors, (candidate.text, score))
        return f"final score {_fmt(score)}"

    # --- candidate loop -----------------------------------------------------------

    def _run_attempt(
        self,
        segment: SegmentRecord,
        candidate: CandidateTranslation,
        ctx: SegmentContext,
        rounds_out: list[RoundRecord],
    ) -> float:
        state = OrchestratorState()
        for round_no in range(1, self.config.max_rounds + 1):
            state.round = round_no
            state_digest = state.digest(ctx.memory, ctx.anchors)
            if round_no == self.config.max_rounds:
                if state.tentative is None:
                    raise AgentError(
                        "round limit reached without any tentative score to finalize"
                    )
                action = {"kind": "finalize", "score": state.tentative.score}
            else:
                action = self.decide_next_action(state, ctx, segment, candidate)
            if action["kind"] == "search":
                result = self._execute_search(action, ctx, state)
            elif action["kind"] == "evaluate":
                result = self._execute_evaluate(action, ctx, state, segment, candidate)
            elif action["kind"] == "compare":
                result = self._execute_compare(action, ctx, state, segment, candidate)
            else:
                result = self._execute_finalize(action, ctx, candidate)
            state.action_log.append((action, result))
            rounds_out.append(RoundRecord(round_no, state_digest, action, result))
            if action["kind"] == "finalize":
                return action["score"]
        raise AgentError("loop ended without finalizing")  # unreachable

    def run_candidate(
        self,
        segment: SegmentRecord,
        candidate: CandidateTranslation,
        ctx: SegmentContext,
    ) -> tuple[float | None, Trajectory]:
        """Score one candidate, re-initiating from round 1 on sub-agent failure.

        Segment memory and anchors survive re-initiation; per-candidate state
        does not. After the re-initiation budget is spent the trajectory
        carries a failure record instead of a score.
        """
        failures: list[str] = []
        rounds: list[RoundRecord] = []
        for attempt in range(self.config.reinit_budget + 1):
            rounds = []
            try:
                score = self._run_attempt(segment, candidate, ctx, rounds)
            except (AgentError, GatewayError) as exc:
                failures.append(str(exc))
                continue
            return score, Trajectory(
                segment_id=segment.id,
                system_id=candidate.system_id,
                rounds=tuple(rounds),
                final_score=score,
                reinitiations=attempt,
            )
        return None, Trajectory(
            segment_id=segment.id,
            system_id=candidate.system_id,
            rounds=tuple(rounds),
            final_score=None,
            reinitiations=self.config.reinit_budget,
            failure=f"{len(failures)} attempts failed; last: {failures[-1]}",
        )

    def evaluate_segment(
        self, segment: SegmentRecord
    ) -> tuple[list[tuple[str, float | None]], list[Trajectory]]:
        """Score all candidates of a segment in order, sharing memory and anchors.

        Per-candidate failures are isolated: the remaining candidates still run.
        """
        ctx = SegmentContext()
        scores: list[tuple[str, float | None]] = []
        trajectories: list[Trajectory] = []
        for candidate in segment.candidates:
            score, trajectory = self.run_candidate(segment, candidate, ctx)
            scores.append((candidate.system_id, score))
            trajectories.append(trajectory)
        return scores, trajectories
