"""Command-line entry point: evaluate a dataset, build meta-evaluation
reports, and export inter-annotator agreement.

Configuration is a flat JSON key-value document (dotted keys such as
"llm.endpoint"); command-line flags override file values. With --fixtures
the gateways run in scripted mode and no network or API keys are needed.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .agents import AgentError
from .baselines import gemba_da, gemba_mqm
from .dataset import DatasetError, SegmentRecord, load_dataset
from .gateways import (
    GatewayError,
    GatewaySettings,
    HttpLlm,
    HttpSearch,
    ScriptedLlm,
    ScriptedSearch,
)
from .orchestrator import LoopConfig, Orchestrator, read_trajectories, write_trajectories
from . import report as report_mod

METRICS = ("rate", "gemba_da", "gemba_mqm")
ABLATIONS = ("no_search", "no_compare")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: Path
    metric: str = "rate"
    ablation: frozenset[str] = frozenset()
    max_rounds: int = 10
    fixtures: Path | None = None
    out: Path = Path(".")
    parallel: int = 1
    reinit_budget: int = 2
    gateway: GatewaySettings = field(default_factory=GatewaySettings)

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        unknown = set(self.ablation) - set(ABLATIONS)
        if unknown:
            raise ConfigError(f"unknown ablation flags {sorted(unknown)}")
        if self.ablation and self.metric != "rate":
            raise ConfigError("ablation flags apply only to metric=rate")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")


def load_config_file(path: str | Path) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must be a flat JSON object")
    return obj


def _merged_value(args: argparse.Namespace, file_values: dict, key: str, default=None):
    flag = getattr(args, key.replace(".", "_"), None)
    if flag is not None:
        return flag
    if key in file_values:
        return file_values[key]
    return default


def build_run_config(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    dataset = _merged_value(args, file_values, "dataset")
    if not dataset:
        raise ConfigError("--dataset is required")
    ablation = args.ablation if args.ablation else file_values.get("ablation", [])
    if isinstance(ablation, str):
        ablation = [a for a in ablation.split(",") if a]
    flat: list[str] = []
    for entry in ablation:
        flat.extend(a.strip() for a in str(entry).split(",") if a.strip())
    fixtures = _merged_value(args, file_values, "fixtures")
    gateway = GatewaySettings(
        llm_endpoint=str(file_values.get("llm.endpoint", "")),
        llm_model=str(file_values.get("llm.model", "")),
        search_endpoint=str(file_values.get("search.endpoint", "")),
        timeout_s=float(file_values.get("gateway.timeout_s", 30.0)),
        retries=int(file_values.get("gateway.retries", 2)),
    )
    return RunConfig(
        dataset=Path(dataset),
        metric=str(_merged_value(args, file_values, "metric", "rate")),
        ablation=frozenset(flat),
        max_rounds=int(_merged_value(args, file_values, "max_rounds", 10)),
        fixtures=Path(fixtures) if fixtures else None,
        out=Path(_merged_value(args, file_values, "out", ".")),
        parallel=int(_merged_value(args, file_values, "parallel", 1)),
        reinit_budget=int(file_values.get("reinit_budget", 2)),
        gateway=gateway,
    )


def build_gateways(config: RunConfig) -> tuple[object, object]:
    if config.fixtures is not None:
        return ScriptedLlm(config.fixtures), ScriptedSearch(config.fixtures)
    if not config.gateway.llm_endpoint:
        raise ConfigError("live mode needs llm.endpoint in the config file (or use --fixtures)")
    llm = HttpLlm(config.gateway)
    search = HttpSearch(config.gateway)
    return llm, search


# --- evaluate ---------------------------------------------------------------------


def _segment_rows_rate(
    orchestrator: Orchestrator, record: SegmentRecord
) -> tuple[list[dict], list]:
    scores, trajectories = orchestrator.evaluate_segment(record)
    rows = [
        {
            "segment_id": record.id,
            "system_id": system_id,
            "score": score,
            "failed": score is None,
        }
        for system_id, score in scores
    ]
    return rows, trajectories


def _segment_rows_baseline(llm, record: SegmentRecord, metric: str) -> tuple[list[dict], list]:
    rows = []
    for candidate in record.candidates:
        try:
            if metric == "gemba_da":
                score: float | None = float(
                    gemba_da(
                        llm,
                        record.source,
                        candidate.text,
                        record.direction.source_language,
                        record.direction.target_language,
                    )
                )
            else:
                score, _ = gemba_mqm(
                    llm,
                    record.source,
                    candidate.text,
                    record.direction.source_language,
                    record.direction.target_language,
                )
        except (AgentError, GatewayError):
            score = None
        rows.append(
            {
                "segment_id": record.id,
                "system_id": candidate.system_id,
                "score": score,
                "failed": score is None,
            }
        )
    return rows, []


def cmd_evaluate(config: RunConfig) -> int:
    records = load_dataset(config.dataset)
    llm, search = build_gateways(config)
    config.out.mkdir(parents=True, exist_ok=True)
    if config.metric == "rate":
        loop = LoopConfig(
            max_rounds=config.max_rounds,
            no_search="no_search" in config.ablation,
            no_compare="no_compare" in config.ablation,
            reinit_budget=config.reinit_budget,
        )
        orchestrator = Orchestrator(llm, search, loop)
        worker = lambda record: _segment_rows_rate(orchestrator, record)  # noqa: E731
    else:
        worker = lambda record: _segment_rows_baseline(llm, record, config.metric)  # noqa: E731

    if config.parallel > 1:
        with ThreadPoolExecutor(max_workers=config.parallel) as pool:
            results = list(pool.map(worker, records))
    else:
        results = [worker(record) for record in records]

    all_rows: list[dict] = []
    all_trajectories: list = []
    for rows, trajectories in results:
        all_rows.extend(rows)
        all_trajectories.extend(trajectories)
    report_mod.write_scores(all_rows, config.out / "scores.jsonl")
    if config.metric == "rate":
        write_trajectories(all_trajectories, config.out / "trajectories.jsonl")
    failed = sum(1 for row in all_rows if row["failed"])
    print(
        f"evaluated {len(all_rows)} candidates across {len(records)} segments "
        f"({failed} failed) -> {config.out / 'scores.jsonl'}"
    )
    return 0


# --- meta -------------------------------------------------------------------------


def cmd_meta(scores_path: Path, dataset_path: Path, out: Path, name: str = "") -> int:
    records = load_dataset(dataset_path)
    scores = report_mod.read_scores(scores_path)
    missing = [
        (record.id, candidate.system_id)
        for record in records
        for candidate in record.candidates
        if (record.id, candidate.system_id) not in scores
    ]
    if missing:
        raise ConfigError(
            f"scores file lacks {len(missing)} dataset candidates (first: {missing[0]})"
        )
    out.mkdir(parents=True, exist_ok=True)
    report = report_mod.compute_report(records, scores, metric_name=name)
    trajectories_path = scores_path.parent / "trajectories.jsonl"
    if trajectories_path.exists():
        summary = report_mod.action_summary(read_trajectories(trajectories_path))
        report["action_summary"] = summary
        if summary["actions_by_round"]:
            report_mod.render_action_figure(summary, out / "agent_actions.png")
    report_mod.write_json(report, out / "report.json")
    report_mod.write_report_csv(report, out / "report.csv")
    report_mod.render_report_figure(report, out / "report.png")
    meta = report["overall"]["meta"]
    print(f"meta score: {'undefined' if meta is None else f'{meta:.2f}'} -> {out / 'report.json'}")
    return 0


# --- iaa --------------------------------------------------------------------------


def cmd_iaa(dataset_path: Path, out: Path) -> int:
    records = load_dataset(dataset_path)
    iaa = report_mod.compute_iaa_report(records)
    out.mkdir(parents=True, exist_ok=True)
    report_mod.write_json(iaa, out / "iaa.json")
    if iaa["annotators"]:
        report_mod.render_iaa_heatmap(iaa, out / "iaa_heatmap.png")
    print(f"{len(iaa['annotators'])} annotators -> {out / 'iaa.json'}")
    return 0


# --- argument parsing ---------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rate-eval",
        description="Agentic translation-quality scoring and meta-evaluation reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("evaluate", help="score every candidate in a dataset")
    ev.add_argument("--dataset", help="dataset JSONL path")
    ev.add_argument("--metric", choices=METRICS, default=None)
    ev.add_argument(
        "--ablation",
        action="append",
        default=None,
        help="disable a sub-agent (no_search / no_compare); repeatable or comma-separated",
    )
    ev.add_argument("--max-rounds", dest="max_rounds", type=int, default=None)
    ev.add_argument("--fixtures", help="fixture JSONL; enables scripted gateway mode")
    ev.add_argument("--out", help="output directory")
    ev.add_argument("--parallel", type=int, default=None)
    ev.add_argument("--config", help="flat JSON config file")

    meta = sub.add_parser("meta", help="meta-evaluation report from scores + dataset")
    meta.add_argument("--scores", required=True)
    meta.add_argument("--dataset", required=True)
    meta.add_argument("--out", default=".")
    meta.add_argument("--name", default="", help="metric label for the report")

    iaa = sub.add_parser("iaa", help="inter-annotator agreement matrix")
    iaa.add_argument("--dataset", required=True, help="annotations (dataset JSONL) path")
    iaa.add_argument("--out", default=".")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "evaluate":
            return cmd_evaluate(build_run_config(args))
        if args.command == "meta":
            return cmd_meta(Path(args.scores), Path(args.dataset), Path(args.out), args.name)
        if args.command == "iaa":
            return cmd_iaa(Path(args.dataset), Path(args.out))
    except (ConfigError, DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
