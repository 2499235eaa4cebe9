"""Loading, validation and aggregation of segment-level translation quality data.

The on-disk format is UTF-8 JSON lines, one segment per line:

    {"id": ..., "domain": ..., "direction": ..., "source": ...,
     "reference": ... | null,
     "candidates": [{"system_id": ..., "text": ...,
                     "annotator_scores": [["a1", 3], ["a2", 4]],
                     "human_score": 3.5}, ...]}

Unknown keys are ignored. Scores are integers in 0..4; the per-candidate
human score, when present, must equal the exact mean of the annotator
scores and is kept as a `fractions.Fraction` so nothing is rounded before
the statistics layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

VALID_SCORES = frozenset(range(5))


class DatasetError(ValueError):
    """Raised for unreadable files, schema violations or invariant breaks."""


class Domain(str, Enum):
    SNS = "SNS"
    CROSS_CULTURE = "CrossCulture"
    POETRY = "Poetry"
    LITERATURE = "Literature"


class Direction(str, Enum):
    ZH_EN = "ZhEn"
    EN_ZH = "EnZh"

    @property
    def source_language(self) -> str:
        return "Chinese" if self is Direction.ZH_EN else "English"

    @property
    def target_language(self) -> str:
        return "English" if self is Direction.ZH_EN else "Chinese"


class QcVerdict(str, Enum):
    PASS = "Pass"
    REANNOTATE = "Reannotate"


@dataclass(frozen=True)
class CandidateTranslation:
    system_id: str
    text: str
    annotator_scores: tuple[tuple[str, int], ...] = ()
    human_score: Fraction | None = None

    def resolved_human_score(self) -> Fraction:
        """Stored human score, or the exact mean of the annotator scores."""
        if self.human_score is not None:
            return self.human_score
        if not self.annotator_scores:
            raise DatasetError(
                f"candidate {self.system_id!r} has neither human_score nor annotator_scores"
            )
        return aggregate_human_score([s for _, s in self.annotator_scores])


@dataclass(frozen=True)
class SegmentRecord:
    id: str
    domain: Domain
    direction: Direction
    source: str
    reference: str | None
    candidates: tuple[CandidateTranslation, ...]


@dataclass(frozen=True)
class QcResult:
    segment_id: str
    pairwise_r: tuple[tuple[str, str, float | None], ...]
    verdict: QcVerdict


def aggregate_human_score(annotator_scores: Sequence[int]) -> Fraction:
    """Exact arithmetic mean of per-annotator integer scores."""
    if not annotator_scores:
        raise DatasetError("cannot aggregate an empty score list")
    return Fraction(sum(annotator_scores), len(annotator_scores))


def _parse_score_value(value: object, where: str) -> Fraction:
    if isinstance(value, bool):
        raise DatasetError(f"{where}: expected a number, got a bool")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise DatasetError(f"{where}: unparseable rational {value!r}") from exc
    raise DatasetError(f"{where}: expected a number, got {type(value).__name__}")


def _score_to_json(score: Fraction) -> int | float | str:
    if score.denominator == 1:
        return int(score)
    as_float = float(score)
    if Fraction(as_float) == score:
        return as_float
    return f"{score.numerator}/{score.denominator}"


def _candidate_from_dict(obj: Mapping, where: str) -> CandidateTranslation:
    if not isinstance(obj, Mapping):
        raise DatasetError(f"{where}: candidate must be an object")
    for key in ("system_id", "text"):
        if key not in obj or not isinstance(obj[key], str):
            raise DatasetError(f"{where}: missing or non-string field {key!r}")
    raw_scores = obj.get("annotator_scores", [])
    if not isinstance(raw_scores, list):
        raise DatasetError(f"{where}: field 'annotator_scores' must be a list")
    scores: list[tuple[str, int]] = []
    for entry in raw_scores:
        if (
            not isinstance(entry, (list, tuple))
            or len(entry) != 2
            or not isinstance(entry[0], str)
            or not isinstance(entry[1], int)
            or isinstance(entry[1], bool)
        ):
            raise DatasetError(
                f"{where}: field 'annotator_scores' entries must be [annotator_id, score] pairs"
            )
        annotator, score = entry
        if score not in VALID_SCORES:
            raise DatasetError(
                f"{where}: field 'annotator_scores' score {score} outside 0..4"
            )
        scores.append((annotator, score))
    human_score: Fraction | None = None
    if obj.get("human_score") is not None:
        human_score = _parse_score_value(obj["human_score"], f"{where}: field 'human_score'")
        if scores and human_score != aggregate_human_score([s for _, s in scores]):
            raise DatasetError(
                f"{where}: field 'human_score' does not equal the mean of annotator_scores"
            )
        if not 0 <= human_score <= 4:
            raise DatasetError(f"{where}: field 'human_score' outside [0, 4]")
    return CandidateTranslation(
        system_id=obj["system_id"],
        text=obj["text"],
        annotator_scores=tuple(scores),
        human_score=human_score,
    )


def _record_from_dict(obj: Mapping, where: str) -> SegmentRecord:
    if not isinstance(obj, Mapping):
        raise DatasetError(f"{where}: line must be a JSON object")
    for key in ("id", "domain", "direction", "source"):
        if key not in obj or not isinstance(obj[key], str):
            raise DatasetError(f"{where}: missing or non-string field {key!r}")
    try:
        domain = Domain(obj["domain"])
    except ValueError as exc:
        raise DatasetError(f"{where}: field 'domain' has unknown value {obj['domain']!r}") from exc
    try:
        direction = Direction(obj["direction"])
    except ValueError as exc:
        raise DatasetError(
            f"{where}: field 'direction' has unknown value {obj['direction']!r}"
        ) from exc
    reference = obj.get("reference")
    if reference is not None and not isinstance(reference, str):
        raise DatasetError(f"{where}: field 'reference' must be a string or null")
    raw_candidates = obj.get("candidates")
    if not isinstance(raw_candidates, list) or not raw_candidates:
        raise DatasetError(f"{where}: field 'candidates' must be a non-empty list")
    candidates = tuple(
        _candidate_from_dict(c, f"{where}: candidates[{i}]")
        for i, c in enumerate(raw_candidates)
    )
    return SegmentRecord(
        id=obj["id"],
        domain=domain,
        direction=direction,
        source=obj["source"],
        reference=reference,
        candidates=candidates,
    )


def load_dataset(path: str | Path) -> list[SegmentRecord]:
    """Load segment records from a JSON-lines file, validating every line.

    Line order is preserved; blank lines are skipped; errors name the
    offending line and field.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    records: list[SegmentRecord] = []
    seen_ids: set[str] = set()
    for line_num, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        where = f"line {line_num}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{where}: invalid JSON ({exc.msg})") from exc
        record = _record_from_dict(obj, where)
        if record.id in seen_ids:
            raise DatasetError(f"{where}: duplicate segment id {record.id!r}")
        seen_ids.add(record.id)
        records.append(record)
    return records


def record_to_dict(record: SegmentRecord) -> dict:
    return {
        "id": record.id,
        "domain": record.domain.value,
        "direction": record.direction.value,
        "source": record.source,
        "reference": record.reference,
        "candidates": [
            {
                "system_id": c.system_id,
                "text": c.text,
                "annotator_scores": [[a, s] for a, s in c.annotator_scores],
                "human_score": None if c.human_score is None else _score_to_json(c.human_score),
            }
            for c in record.candidates
        ],
    }


def save_dataset(records: Iterable[SegmentRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False) + "\n")


def _pearson_or_none(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Sample Pearson r, or None when either vector is constant."""
    n = len(x)
    mean_x = sum(x) / n
    mean_y = sum(y) / n
    var_x = sum((a - mean_x) ** 2 for a in x)
    var_y = sum((b - mean_y) ** 2 for b in y)
    if var_x == 0 or var_y == 0:
        return None
    cov = sum((a - mean_x) * (b - mean_y) for a, b in zip(x, y))
    return cov / math.sqrt(var_x * var_y)


def _complete_annotator_vectors(segment: SegmentRecord) -> dict[str, list[int]]:
    """Per-annotator score vectors over the segment's candidates.

    Only annotators who scored every candidate contribute a vector.
    """
    per_annotator: dict[str, dict[int, int]] = {}
    for idx, candidate in enumerate(segment.candidates):
        for annotator, score in candidate.annotator_scores:
            per_annotator.setdefault(annotator, {})[idx] = score
    n = len(segment.candidates)
    return {
        annotator: [scores[i] for i in range(n)]
        for annotator, scores in per_annotator.items()
        if len(scores) == n
    }


def qc_segment(segment: SegmentRecord, threshold: float = 0.7) -> QcResult:
    """Pairwise annotator agreement check over one segment.

    Every pair of complete annotators must reach a Pearson correlation of
    at least `threshold` over their per-candidate score vectors; an
    undefined correlation (constant vector) counts as non-agreement.
    """
    vectors = _complete_annotator_vectors(segment)
    if len(vectors) < 2:
        raise DatasetError(
            f"segment {segment.id!r}: need at least 2 annotators covering all candidates"
        )
    annotators = sorted(vectors)
    pairwise: list[tuple[str, str, float | None]] = []
    all_pass = True
    for i, a in enumerate(annotators):
        for b in annotators[i + 1 :]:
            r = _pearson_or_none(vectors[a], vectors[b])
            pairwise.append((a, b, r))
            if r is None or r < threshold:
                all_pass = False
    verdict = QcVerdict.PASS if all_pass else QcVerdict.REANNOTATE
    return QcResult(segment_id=segment.id, pairwise_r=tuple(pairwise), verdict=verdict)


def compute_iaa(
    annotations: Mapping[str, Mapping[str, Sequence[int]]],
) -> tuple[list[str], list[list[float | None]]]:
    """Inter-annotator agreement matrix from per-segment score vectors.

    `annotations` maps annotator id -> segment id -> score vector (one
    entry per candidate system). For each annotator pair the vectors of
    their shared segments are summed element-wise and the two summed
    vectors are correlated; pairs with no shared segments (or an
    undefined correlation) get None.
    """
    annotators = sorted(annotations)
    matrix: list[list[float | None]] = [
        [None] * len(annotators) for _ in annotators
    ]
    for i, a in enumerate(annotators):
        for j in range(i, len(annotators)):
            b = annotators[j]
            shared = sorted(set(annotations[a]) & set(annotations[b]))
            if not shared:
                continue
            length = len(annotations[a][shared[0]])
            sum_a = [0] * length
            sum_b = [0] * length
            for seg in shared:
                va, vb = annotations[a][seg], annotations[b][seg]
                if len(va) != length or len(vb) != length:
                    raise DatasetError(
                        f"annotators {a!r}/{b!r}: mismatched vector length on segment {seg!r}"
                    )
                for k in range(length):
                    sum_a[k] += va[k]
                    sum_b[k] += vb[k]
            r = _pearson_or_none(sum_a, sum_b)
            matrix[i][j] = r
            matrix[j][i] = r
    return annotators, matrix


def annotator_segment_vectors(
    records: Iterable[SegmentRecord],
) -> dict[str, dict[str, list[int]]]:
    """Extract the per-annotator vectors `compute_iaa` consumes from records."""
    out: dict[str, dict[str, list[int]]] = {}
    for record in records:
        for annotator, vector in _complete_annotator_vectors(record).items():
            out.setdefault(annotator, {})[record.id] = vector
    return out
