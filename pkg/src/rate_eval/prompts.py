"""Prompt text assets for all agents and baselines.

Each prompt family carries a version tag so fixture sets can be tied to the
exact wording they were recorded against. The first line of each system
prompt doubles as a stable marker that test doubles can dispatch on.
"""

from __future__ import annotations

PROMPTS_VERSION = "1"

JSON_REMINDER = (
    "Your previous reply could not be used. Respond again with only a single "
    "valid JSON object of the requested form, with no surrounding prose."
)

# --- core controller ---------------------------------------------------------

CORE_SYSTEM = """\
You are the core controller of a translation quality evaluation loop.
Decide, one step at a time, how to score a candidate translation on the 0-4
quality scale. You may gather background knowledge, request pointwise
assessments, and verify uncertain scores by pairwise comparison against
anchor translations. Stop as soon as the gathered evidence supports a
confident final score."""

CORE_DECIDE = """\
Source ({source_language}): {source}
Candidate translation ({target_language}): {candidate}

Round {round} of {max_rounds}.
Tentative score: {tentative}
Knowledge memory:
{memory}
Anchor slots: {anchors}
History:
{history}

Choose exactly one action:
{menu}

Reply with a single JSON object naming the action and its fields."""

MENU_SEARCH = (
    '- search: retrieve background knowledge about slang, idioms, allusions or '
    'entities you are unsure of. Reply {"action": "search", "request": "<what to look up>"}'
)
MENU_EVALUATE = (
    '- evaluate: request a pointwise 0-4 assessment, optionally passing guidance and '
    'knowledge notes. Reply {"action": "evaluate", "instructions": "<guidance>", '
    '"note_refs": [<memory indices>]}'
)
MENU_COMPARE = (
    '- compare: verify the tentative score by pairwise comparison against a stored '
    'anchor translation (only after at least one evaluation, never in round 1). '
    'Reply {"action": "compare", "anchor_level": <0-4 integer, optional>}'
)
MENU_FINALIZE = (
    '- finalize: commit the final score once the evidence is sufficient (requires a '
    'tentative score). Reply {"action": "finalize", "score": <0-4 number>}'
)

CORE_CONSTRAINT_REMINDER = (
    "That action is not available right now. Pick one of the listed actions and "
    "respect the constraints: compare is unavailable in round 1 and before any "
    "evaluation; finalize requires a tentative score. Reply with one JSON object."
)

# --- evaluation agent ---------------------------------------------------------

EVAL_SYSTEM = """\
You are a strict translation quality assessor.
Judge how faithfully and fluently the candidate renders the source, paying
special attention to non-literal material: slang, idioms, wordplay, cultural
references and allusions. Use the 0-4 scale:
0 = meaning destroyed; 1 = severe errors in part of the content;
2 = understandable but biased or overly literal; 3 = fully accurate but
awkward; 4 = fully accurate, fluent and culturally adapted.
Report spans you believe are wrong, and name any background knowledge you
would need but do not have."""

EVAL_USER = """\
Source ({source_language}): {source}
Candidate translation ({target_language}): {candidate}
Guidance: {instructions}
Background notes:
{notes}

Reply with a single JSON object:
{{"score": <0-4 integer>, "confidence": <0-1 number>, "rationale": "<why>",
 "error_spans": [{{"span": "<text>", "note": "<problem>"}}],
 "knowledge_gaps": ["<missing background>"]}}"""

# --- search agent -------------------------------------------------------------

SEARCH_REFORMULATE_SYSTEM = """\
You are a web search specialist.
Turn a knowledge request into at most {max_queries} short search engine
queries that are likely to surface the missing background."""

SEARCH_REFORMULATE_USER = """\
Knowledge request: {request}

Reply with a single JSON object: {{"queries": ["<query>", ...]}}"""

SEARCH_SUMMARIZE_SYSTEM = """\
You are a research summarizer.
Condense search results into a short, factual note answering the original
knowledge request. Only state what the results support."""

SEARCH_SUMMARIZE_USER = """\
Knowledge request: {request}
Search results:
{snippets}

Reply with a single JSON object: {{"topic": "<short label>", "summary": "<note>"}}"""

# --- comparison agent ---------------------------------------------------------

COMPARE_SYSTEM = """\
You are a translation comparison judge.
Given one source and two candidate translations, decide which candidate is
the better translation, or whether they are equivalent. Consider accuracy
first, then fluency and cultural fit."""

COMPARE_USER = """\
Source: {source}
Translation A: {a}
Translation B: {b}
Background notes:
{notes}

Reply with a single JSON object: {{"winner": "A" | "B" | "tie"}}"""

# --- anchor bootstrapping -----------------------------------------------------

ANCHOR_SYSTEM = """\
You are a translation generator used to build reference points for pairwise
quality comparison."""

ANCHOR_LOW_USER = """\
Write a deliberately poor, word-for-word literal translation of the source
below. It should be understandable as a translation attempt but miss the
non-literal meaning (quality level 1 on a 0-4 scale).
Source: {source}

Reply with a single JSON object: {{"translation": "<text>"}}"""

ANCHOR_HIGH_USER = """\
Write an excellent, fluent, culturally adapted translation of the source
below (quality level 4 on a 0-4 scale), using the background notes.
Source: {source}
Background notes:
{notes}

Reply with a single JSON object: {{"translation": "<text>"}}"""

# --- baselines ----------------------------------------------------------------

GEMBA_DA_PROMPT = """\
Score the following translation from {source_language} to {target_language} \
on a continuous scale from 0 to 100, where a score of zero means "no meaning \
preserved" and a score of one hundred means "perfect meaning and grammar".

{source_language} source: "{source}"
{target_language} translation: "{candidate}"

Reply with a single JSON object: {{"score": <integer 0-100>}}"""

GEMBA_MQM_SYSTEM = """\
You are an annotator of translation errors.
Identify all errors in the translation and classify each as critical, major
or minor. Critical errors destroy the meaning; major errors mislead or
confuse the reader; minor errors are small lapses in fluency or style."""

GEMBA_MQM_USER = """\
{source_language} source: "{source}"
{target_language} translation: "{candidate}"

List the errors grouped by severity, using exactly this layout (write
"no-error" under a severity with no entries):
Critical:
<category>/<subcategory> - "<error span>"
Major:
...
Minor:
..."""
