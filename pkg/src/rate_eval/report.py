"""Report assembly: score matrices, per-direction/per-domain statistics,
and the delimited + figure outputs of the reporting commands."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataset import SegmentRecord, annotator_segment_vectors, compute_iaa
from .metrics import (
    DIRECTION_STAT_NAMES,
    DirectionStats,
    ScoreMatrix,
    UndefinedStatisticError,
    direction_stats,
    meta_score,
    round_half_up,
)
from .orchestrator import Trajectory

ScoreRow = dict
ScoreKey = tuple[str, str]  # (segment_id, system_id)


# --- scores.jsonl ----------------------------------------------------------------


def write_scores(rows: Iterable[ScoreRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            ordered = {
                "segment_id": row["segment_id"],
                "system_id": row["system_id"],
                "score": row["score"],
                "failed": row["failed"],
            }
            fh.write(json.dumps(ordered, ensure_ascii=False) + "\n")


def read_scores(path: str | Path) -> dict[ScoreKey, float | None]:
    scores: dict[ScoreKey, float | None] = {}
    for line_num, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        score = None if obj.get("failed") else float(obj["score"])
        scores[(obj["segment_id"], obj["system_id"])] = score
    return scores


# --- matrix building ----------------------------------------------------------------


def build_score_matrix(
    records: Sequence[SegmentRecord],
    scores: Mapping[ScoreKey, float | None],
    direction: str,
    domain: str | None = None,
) -> tuple[ScoreMatrix | None, int]:
    """Rectangular metric/human matrices for one slice of the dataset.

    A segment contributes a row only if every one of the slice's systems has
    a non-failed metric score and a human score for it; other segments are
    dropped whole (pairwise exclusion keeps the two matrices aligned).
    Returns (matrix or None if empty, number of dropped segments).
    """
    slice_records = [
        r
        for r in records
        if r.direction.value == direction and (domain is None or r.domain.value == domain)
    ]
    if not slice_records:
        return None, 0
    systems = [c.system_id for c in slice_records[0].candidates]
    dropped = 0
    segment_ids: list[str] = []
    metric_rows: list[list[float]] = []
    human_rows: list[list[float]] = []
    for record in slice_records:
        by_system = {c.system_id: c for c in record.candidates}
        if set(by_system) != set(systems):
            dropped += 1
            continue
        metric_row: list[float] = []
        human_row: list[float] = []
        ok = True
        for system in systems:
            value = scores.get((record.id, system))
            candidate = by_system[system]
            if value is None or (
                candidate.human_score is None and not candidate.annotator_scores
            ):
                ok = False
                break
            metric_row.append(value)
            human_row.append(float(candidate.resolved_human_score()))
        if not ok:
            dropped += 1
            continue
        segment_ids.append(record.id)
        metric_rows.append(metric_row)
        human_rows.append(human_row)
    if not segment_ids:
        return None, dropped
    return (
        ScoreMatrix(
            segments=tuple(segment_ids),
            systems=tuple(systems),
            metric=np.array(metric_rows, dtype=np.float64),
            human=np.array(human_rows, dtype=np.float64),
            direction=direction,
            domain=domain,
        ),
        dropped,
    )


# --- report dict ----------------------------------------------------------------------


def _stats_dict(stats: DirectionStats | None) -> dict:
    if stats is None:
        return {name: None for name in DIRECTION_STAT_NAMES} | {"acc_t_epsilon": None}
    return {
        "sys_acc": stats.sys_acc,
        "sys_pearson": stats.sys_pearson,
        "sys_spearman": stats.sys_spearman,
        "seg_acc_t": stats.seg_acc_t,
        "seg_pearson": stats.seg_pearson,
        "seg_spearman": stats.seg_spearman,
        "acc_t_epsilon": stats.acc_t_epsilon,
    }


def _scope_report(
    records: Sequence[SegmentRecord],
    scores: Mapping[ScoreKey, float | None],
    directions: Sequence[str],
    domain: str | None,
) -> dict:
    out: dict = {"directions": {}, "meta": None, "excluded_segments": 0}
    complete: dict[str, Sequence[float]] = {}
    for direction in directions:
        matrix, dropped = build_score_matrix(records, scores, direction, domain)
        out["excluded_segments"] += dropped
        if matrix is None:
            out["directions"][direction] = _stats_dict(None) | {"n_segments": 0}
            continue
        try:
            stats = direction_stats(matrix)
        except UndefinedStatisticError:
            stats = None
        entry = _stats_dict(stats)
        entry["n_segments"] = len(matrix.segments)
        entry["n_systems"] = len(matrix.systems)
        out["directions"][direction] = entry
        if stats is not None:
            complete[direction] = stats.values()
    if complete:
        per_direction, overall = meta_score(complete)
        for direction, value in per_direction.items():
            out["directions"][direction]["meta"] = value
        out["meta"] = overall
    return out


def compute_report(
    records: Sequence[SegmentRecord],
    scores: Mapping[ScoreKey, float | None],
    metric_name: str = "",
) -> dict:
    """Full meta-evaluation report: overall plus per-domain breakdowns."""
    directions = []
    for record in records:
        if record.direction.value not in directions:
            directions.append(record.direction.value)
    domains = []
    for record in records:
        if record.domain.value not in domains:
            domains.append(record.domain.value)
    failed = sum(1 for value in scores.values() if value is None)
    report = {
        "metric": metric_name,
        "failed_candidates": failed,
        "overall": _scope_report(records, scores, directions, None),
        "domains": {
            domain: _scope_report(records, scores, directions, domain) for domain in domains
        },
    }
    return report


# --- delimited + figure outputs ----------------------------------------------------


_CSV_DIRECTION_ORDER = ("ZhEn", "EnZh")


def _csv_columns(directions: Sequence[str]) -> list[str]:
    ordered = [d for d in _CSV_DIRECTION_ORDER if d in directions] + [
        d for d in directions if d not in _CSV_DIRECTION_ORDER
    ]
    columns = ["scope", "meta"]
    for direction in ordered:
        columns.extend(f"{direction}_{name}" for name in DIRECTION_STAT_NAMES)
    for direction in ordered:
        columns.append(f"{direction}_acc_t_epsilon")
    return columns


def _fmt_stat(value: float | None) -> str:
    if value is None:
        return ""
    return f"{round_half_up(value, 1):.1f}"


def write_report_csv(report: dict, path: str | Path) -> None:
    directions = list(report["overall"]["directions"])
    columns = _csv_columns(directions)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for scope, body in [("all", report["overall"])] + [
            (domain, report["domains"][domain]) for domain in report["domains"]
        ]:
            row = [scope, _fmt_stat(body["meta"])]
            for column in columns[2:]:
                direction, _, stat = column.partition("_")
                value = body["directions"].get(direction, {}).get(stat)
                if stat == "acc_t_epsilon":
                    row.append("" if value is None else f"{value:g}")
                else:
                    row.append(_fmt_stat(value))
            writer.writerow(row)


def render_report_figure(report: dict, path: str | Path) -> None:
    """Grouped bar chart of the six statistics per direction."""
    directions = [
        d
        for d, body in report["overall"]["directions"].items()
        if body.get("sys_acc") is not None
    ]
    fig, ax = plt.subplots(figsize=(9, 4.5))
    x = np.arange(len(DIRECTION_STAT_NAMES))
    width = 0.8 / max(1, len(directions))
    for i, direction in enumerate(directions):
        body = report["overall"]["directions"][direction]
        values = [body[name] for name in DIRECTION_STAT_NAMES]
        ax.bar(x + i * width, values, width, label=direction)
    ax.set_xticks(x + width * (len(directions) - 1) / 2)
    ax.set_xticklabels(DIRECTION_STAT_NAMES, rotation=20, ha="right")
    ax.set_ylabel("score (x100)")
    meta = report["overall"]["meta"]
    title = f"{report.get('metric') or 'metric'} meta-evaluation"
    if meta is not None:
        title += f" (meta {round_half_up(meta, 1):.1f})"
    ax.set_title(title)
    if directions:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def action_summary(trajectories: Sequence[Trajectory]) -> dict:
    """Per-round action counts plus failure totals across trajectories."""
    per_round: dict[int, dict[str, int]] = {}
    failures = 0
    for trajectory in trajectories:
        if trajectory.failure is not None:
            failures += 1
        for record in trajectory.rounds:
            kind = record.action["kind"]
            per_round.setdefault(record.round, {})[kind] = (
                per_round.get(record.round, {}).get(kind, 0) + 1
            )
    return {
        "trajectories": len(trajectories),
        "failures": failures,
        "actions_by_round": {str(r): per_round[r] for r in sorted(per_round)},
    }


def render_action_figure(summary: dict, path: str | Path) -> None:
    """Stacked bars of action kinds by round."""
    rounds = sorted(int(r) for r in summary["actions_by_round"])
    kinds = ["search", "evaluate", "compare", "finalize"]
    fig, ax = plt.subplots(figsize=(8, 4))
    bottom = np.zeros(len(rounds))
    for kind in kinds:
        values = np.array(
            [summary["actions_by_round"][str(r)].get(kind, 0) for r in rounds], dtype=float
        )
        ax.bar([str(r) for r in rounds], values, bottom=bottom, label=kind)
        bottom += values
    ax.set_xlabel("round")
    ax.set_ylabel("invocations")
    ax.set_title("sub-agent invocations by round")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# --- inter-annotator agreement outputs ------------------------------------------------


def compute_iaa_report(records: Sequence[SegmentRecord]) -> dict:
    annotators, matrix = compute_iaa(annotator_segment_vectors(records))
    return {"annotators": annotators, "matrix": matrix}


def render_iaa_heatmap(iaa: dict, path: str | Path) -> None:
    annotators = iaa["annotators"]
    matrix = np.array(
        [[np.nan if v is None else v for v in row] for row in iaa["matrix"]], dtype=float
    )
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * len(annotators), 0.8 + 0.6 * len(annotators)))
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("#dddddd")
    image = ax.imshow(matrix, cmap=cmap, vmin=-1.0, vmax=1.0)
    ax.set_xticks(range(len(annotators)))
    ax.set_yticks(range(len(annotators)))
    ax.set_xticklabels(annotators, rotation=45, ha="right")
    ax.set_yticklabels(annotators)
    for i in range(len(annotators)):
        for j in range(len(annotators)):
            if not np.isnan(matrix[i, j]):
                ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center", fontsize=8)
    fig.colorbar(image, ax=ax, label="Pearson r")
    ax.set_title("inter-annotator agreement")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_json(payload: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
