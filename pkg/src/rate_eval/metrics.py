"""Meta-evaluation statistics: correlations, pairwise accuracies, composite score.

Everything here is a pure function over score vectors or a ScoreMatrix
(aligned metric/human score grids for one translation direction).
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

import numpy as np

DIRECTION_STAT_NAMES = (
    "sys_acc",
    "sys_pearson",
    "sys_spearman",
    "seg_acc_t",
    "seg_pearson",
    "seg_spearman",
)


class UndefinedStatisticError(ValueError):
    """A statistic has no value on this input (constant vector, no pairs...)."""


@dataclass(frozen=True)
class ScoreMatrix:
    """Aligned segment x system grids of metric and human scores."""

    segments: tuple[str, ...]
    systems: tuple[str, ...]
    metric: np.ndarray
    human: np.ndarray
    direction: str
    domain: str | None = None

    def __post_init__(self) -> None:
        shape = (len(self.segments), len(self.systems))
        if self.metric.shape != shape or self.human.shape != shape:
            raise ValueError(
                f"matrix shape mismatch: {self.metric.shape}/{self.human.shape} vs {shape}"
            )


def _as_vector(x: Sequence[float]) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    a = _as_vector(x)
    b = _as_vector(y)
    if a.size != b.size:
        raise ValueError("pearson: vectors differ in length")
    if a.size < 2:
        raise UndefinedStatisticError("pearson: need at least 2 points")
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        raise UndefinedStatisticError("pearson: undefined on a constant vector")
    return float(a @ b) / denom


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    a = _as_vector(x)
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(a.size, dtype=np.float64)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    a = _as_vector(x)
    b = _as_vector(y)
    if a.size != b.size:
        raise ValueError("spearman: vectors differ in length")
    return pearson(average_ranks(a), average_ranks(b))


def system_scores(matrix: ScoreMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-system means over segments, for metric and human scores."""
    return matrix.metric.mean(axis=0), matrix.human.mean(axis=0)


def system_pairwise_accuracy(
    metric_sys: Sequence[float], human_sys: Sequence[float]
) -> float:
    """Fraction of human-untied system pairs ranked in the same order by the metric."""
    m = _as_vector(metric_sys)
    h = _as_vector(human_sys)
    if m.size != h.size:
        raise ValueError("pairwise accuracy: vectors differ in length")
    if m.size < 2:
        raise UndefinedStatisticError("pairwise accuracy: need at least 2 systems")
    total = 0
    agree = 0
    for i in range(m.size):
        for j in range(i + 1, m.size):
            hd = h[i] - h[j]
            if hd == 0:
                continue
            total += 1
            if np.sign(m[i] - m[j]) == np.sign(hd):
                agree += 1
    if total == 0:
        raise UndefinedStatisticError("pairwise accuracy: all system pairs are human-tied")
    return agree / total


def _segment_pair_deltas(matrix: ScoreMatrix) -> tuple[np.ndarray, np.ndarray]:
    n_seg, n_sys = matrix.metric.shape
    if n_seg < 1 or n_sys < 2:
        raise UndefinedStatisticError("acc-t: need at least 1 segment and 2 systems")
    iu, ju = np.triu_indices(n_sys, k=1)
    m_deltas = (matrix.metric[:, iu] - matrix.metric[:, ju]).reshape(-1)
    h_deltas = (matrix.human[:, iu] - matrix.human[:, ju]).reshape(-1)
    return m_deltas, h_deltas


def _acc_at_epsilon(m_deltas: np.ndarray, h_deltas: np.ndarray, eps: float) -> float:
    human_tied = h_deltas == 0
    metric_tied = np.abs(m_deltas) <= eps
    sign_match = np.sign(m_deltas) == np.sign(h_deltas)
    concordant = np.where(human_tied, metric_tied, sign_match & ~metric_tied)
    return float(concordant.mean())


def segment_acc_t(matrix: ScoreMatrix) -> tuple[float, float]:
    """Segment-level pairwise accuracy with a tuned tie threshold.

    Same-segment system pairs count as concordant when the human scores tie
    and the metric difference falls within epsilon, or when both differences
    share a sign and the metric difference exceeds epsilon. Epsilon is chosen
    from 0 plus the midpoints between consecutive distinct absolute metric
    differences; ties on accuracy go to the smallest epsilon.

    Returns (accuracy, epsilon).
    """
    m_deltas, h_deltas = _segment_pair_deltas(matrix)
    distinct = np.unique(np.abs(m_deltas))
    candidates = [0.0] + [
        float((distinct[i] + distinct[i + 1]) / 2.0) for i in range(distinct.size - 1)
    ]
    best_acc = -1.0
    best_eps = 0.0
    for eps in candidates:
        acc = _acc_at_epsilon(m_deltas, h_deltas, eps)
        if acc > best_acc:
            best_acc = acc
            best_eps = eps
    return best_acc, best_eps


def segment_correlations(matrix: ScoreMatrix) -> tuple[float, float]:
    """Pearson and Spearman over all (segment, system) cells pooled together."""
    m = matrix.metric.reshape(-1)
    h = matrix.human.reshape(-1)
    return pearson(m, h), spearman(m, h)


@dataclass(frozen=True)
class DirectionStats:
    """The six per-direction statistics, each scaled by 100."""

    sys_acc: float
    sys_pearson: float
    sys_spearman: float
    seg_acc_t: float
    seg_pearson: float
    seg_spearman: float
    acc_t_epsilon: float

    def values(self) -> tuple[float, ...]:
        return (
            self.sys_acc,
            self.sys_pearson,
            self.sys_spearman,
            self.seg_acc_t,
            self.seg_pearson,
            self.seg_spearman,
        )


def direction_stats(matrix: ScoreMatrix) -> DirectionStats:
    """All six statistics for one direction's score matrix, scaled by 100."""
    metric_sys, human_sys = system_scores(matrix)
    acc = system_pairwise_accuracy(metric_sys, human_sys)
    sys_r = pearson(metric_sys, human_sys)
    sys_rho = spearman(metric_sys, human_sys)
    acc_t, eps = segment_acc_t(matrix)
    seg_r, seg_rho = segment_correlations(matrix)
    return DirectionStats(
        sys_acc=100.0 * acc,
        sys_pearson=100.0 * sys_r,
        sys_spearman=100.0 * sys_rho,
        seg_acc_t=100.0 * acc_t,
        seg_pearson=100.0 * seg_r,
        seg_spearman=100.0 * seg_rho,
        acc_t_epsilon=eps,
    )


def round_half_up(value: float, ndigits: int = 1) -> float:
    """Decimal half-up rounding; avoids binary-float artifacts like 80.35 -> 80.3."""
    quantum = Decimal(1).scaleb(-ndigits)
    return float(Decimal(str(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def meta_score(
    stats_by_direction: Mapping[str, Sequence[float]],
) -> tuple[dict[str, float], float]:
    """Composite meta score from the six per-direction statistics (each x100).

    Per-direction meta is the plain mean of that direction's six statistics.
    The overall composite averages the per-direction metas at one-decimal
    precision, the precision at which such summaries are tabulated and
    combined.

    Returns (per-direction metas, overall composite).
    """
    if not stats_by_direction:
        raise ValueError("meta_score: no directions given")
    per_direction: dict[str, float] = {}
    for direction, stats in stats_by_direction.items():
        values = list(stats)
        if len(values) != len(DIRECTION_STAT_NAMES):
            raise ValueError(
                f"meta_score: direction {direction!r} has {len(values)} statistics, "
                f"expected {len(DIRECTION_STAT_NAMES)}"
            )
        if any(v is None for v in values):
            raise ValueError(f"meta_score: direction {direction!r} has a missing statistic")
        per_direction[direction] = float(np.mean(values))
    overall = float(np.mean([round_half_up(v, 1) for v in per_direction.values()]))
    return per_direction, overall
