from __future__ import annotations

import json
import re
from fractions import Fraction
from pathlib import Path

import pytest

from rate_eval.cli import ConfigError, RunConfig, build_run_config, main
from rate_eval.dataset import Direction, Domain, save_dataset
from rate_eval.gateways import RecordingLlm, ScriptedSearch, write_fixture_file
from rate_eval.orchestrator import LoopConfig, Orchestrator, read_trajectories
from rate_eval import report as report_mod

from conftest import (
    PolicyLlm,
    make_candidate,
    make_replay_dataset,
    make_segment,
    record_replay_fixture,
)


@pytest.fixture
def replay_run(tmp_path):
    dataset_path, records = make_replay_dataset(tmp_path)
    fixture_path = record_replay_fixture(tmp_path, records)
    return dataset_path, fixture_path


class TestEvaluateCommand:
    def test_fixture_backed_run_writes_all_scores(self, tmp_path, replay_run):
        dataset_path, fixture_path = replay_run
        out = tmp_path / "out"
        code = main(
            [
                "evaluate",
                "--dataset",
                str(dataset_path),
                "--fixtures",
                str(fixture_path),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        rows = [
            json.loads(line)
            for line in (out / "scores.jsonl").read_text().splitlines()
        ]
        assert len(rows) == 6  # 2 segments x 3 systems
        assert [r["score"] for r in rows] == [0.0, 4.0, 2.0, 0.0, 4.0, 2.0]
        assert not any(r["failed"] for r in rows)
        trajectories = read_trajectories(out / "trajectories.jsonl")
        assert len(trajectories) == 6

    def test_two_runs_byte_identical(self, tmp_path, replay_run):
        dataset_path, fixture_path = replay_run
        outputs = []
        for name in ("out1", "out2"):
            out = tmp_path / name
            assert (
                main(
                    [
                        "evaluate",
                        "--dataset",
                        str(dataset_path),
                        "--fixtures",
                        str(fixture_path),
                        "--out",
                        str(out),
                    ]
                )
                == 0
            )
            outputs.append(out)
        assert (outputs[0] / "scores.jsonl").read_bytes() == (
            outputs[1] / "scores.jsonl"
        ).read_bytes()
        assert (outputs[0] / "trajectories.jsonl").read_bytes() == (
            outputs[1] / "trajectories.jsonl"
        ).read_bytes()

    def test_parallel_run_matches_serial(self, tmp_path, replay_run):
        dataset_path, fixture_path = replay_run
        serial, parallel = tmp_path / "serial", tmp_path / "parallel"
        for out, flag in ((serial, "1"), (parallel, "2")):
            main(
                [
                    "evaluate",
                    "--dataset",
                    str(dataset_path),
                    "--fixtures",
                    str(fixture_path),
                    "--out",
                    str(out),
                    "--parallel",
                    flag,
                ]
            )
        assert (serial / "scores.jsonl").read_bytes() == (parallel / "scores.jsonl").read_bytes()

    def test_gemba_da_run_has_no_trajectories(self, tmp_path):
        segment = make_segment(
            seg_id="s1",
            candidates=[
                make_candidate("sys1", "first translation", [("a", 2)]),
                make_candidate("sys2", "second translation", [("a", 3)]),
            ],
        )
        dataset_path = tmp_path / "dataset.jsonl"
        save_dataset([segment], dataset_path)

        def policy(kind, messages):
            assert kind == "gemba_da"
            match = re.search(r'translation: "(.*)"', messages[0][1])
            return json.dumps({"score": 40 + len(match.group(1))})

        llm = RecordingLlm(PolicyLlm(policy))
        from rate_eval.baselines import gemba_da

        for candidate in segment.candidates:
            gemba_da(
                llm,
                segment.source,
                candidate.text,
                segment.direction.source_language,
                segment.direction.target_language,
            )
        fixture_path = tmp_path / "fixtures.jsonl"
        write_fixture_file(fixture_path, chat=llm.recorded)
        out = tmp_path / "out"
        code = main(
            [
                "evaluate",
                "--dataset",
                str(dataset_path),
                "--metric",
                "gemba_da",
                "--fixtures",
                str(fixture_path),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert not (out / "trajectories.jsonl").exists()
        rows = [json.loads(line) for line in (out / "scores.jsonl").read_text().splitlines()]
        assert [r["score"] for r in rows] == [40.0 + len("first translation"), 40.0 + len("second translation")]

    def test_ablation_flags_reach_the_loop(self, tmp_path):
        segment = make_segment(
            seg_id="s1", candidates=[make_candidate("sys1", "text", [("a", 2)])]
        )
        dataset_path = tmp_path / "dataset.jsonl"
        save_dataset([segment], dataset_path)

        def policy(kind, messages):
            if kind == "core":
                user = messages[-1][1]
                assert '"action": "search"' not in user
                assert '"action": "compare"' not in user
                if "Tentative score: none yet" in user:
                    return json.dumps({"action": "evaluate", "instructions": "", "note_refs": []})
                return json.dumps({"action": "finalize", "score": 2})
            if kind == "eval":
                return json.dumps({"score": 2, "confidence": 0.9, "rationale": "ok"})
            raise AssertionError(kind)

        llm = RecordingLlm(PolicyLlm(policy))
        orchestrator = Orchestrator(
            llm, ScriptedSearch({}), LoopConfig(no_search=True, no_compare=True)
        )
        orchestrator.evaluate_segment(segment)
        fixture_path = tmp_path / "fixtures.jsonl"
        write_fixture_file(fixture_path, chat=llm.recorded)
        out = tmp_path / "out"
        code = main(
            [
                "evaluate",
                "--dataset",
                str(dataset_path),
                "--ablation",
                "no_search,no_compare",
                "--fixtures",
                str(fixture_path),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        trajectories = read_trajectories(out / "trajectories.jsonl")
        kinds = {r.action["kind"] for t in trajectories for r in t.rounds}
        assert kinds <= {"evaluate", "finalize"}

    def test_missing_dataset_is_config_error(self, tmp_path, capsys):
        code = main(["evaluate", "--dataset", str(tmp_path / "nope.jsonl"), "--fixtures", "x"])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestRunConfig:
    def test_ablation_requires_rate(self):
        with pytest.raises(ConfigError, match="ablation"):
            RunConfig(dataset=Path("d"), metric="gemba_da", ablation=frozenset({"no_search"}))

    def test_unknown_metric_rejected(self):
        with pytest.raises(ConfigError, match="unknown metric"):
            RunConfig(dataset=Path("d"), metric="bleu")

    def test_config_file_overridden_by_flags(self, tmp_path):
        config_path = tmp_path / "config.json"
        config_path.write_text(
            json.dumps(
                {
                    "dataset": "from_file.jsonl",
                    "metric": "gemba_da",
                    "llm.endpoint": "https://llm.test",
                    "llm.model": "m9",
                    "gateway.timeout_s": 5,
                    "gateway.retries": 1,
                }
            )
        )
        import argparse

        args = argparse.Namespace(
            dataset="flag.jsonl",
            metric=None,
            ablation=None,
            max_rounds=None,
            fixtures=None,
            out=None,
            parallel=None,
            config=str(config_path),
        )
        config = build_run_config(args)
        assert config.dataset == Path("flag.jsonl")  # flag wins
        assert config.metric == "gemba_da"  # file value used
        assert config.gateway.llm_model == "m9"
        assert config.gateway.retries == 1


def build_meta_dataset(tmp_path, with_failure=False):
    """Two directions x three segments x three systems; human means distinct."""
    human = {
        "ZhEn": [[1, 2, 3], [2, 3, 4], [1, 3, 4]],
        "EnZh": [[0, 2, 4], [1, 2, 3], [0, 3, 4]],
    }
    records = []
    for direction, rows in human.items():
        for s, row in enumerate(rows):
            records.append(
                make_segment(
                    seg_id=f"{direction}-s{s}",
                    direction=Direction(direction),
                    domain=Domain.SNS if s % 2 == 0 else Domain.POETRY,
                    candidates=[
                        make_candidate(f"sys{k}", f"text {k}", [("a", score), ("b", score)])
                        for k, score in enumerate(row)
                    ],
                )
            )
    dataset_path = tmp_path / "dataset.jsonl"
    save_dataset(records, dataset_path)
    rows = []
    for record in records:
        for candidate in record.candidates:
            failed = with_failure and record.id == "ZhEn-s1" and candidate.system_id == "sys0"
            rows.append(
                {
                    "segment_id": record.id,
                    "system_id": candidate.system_id,
                    "score": None if failed else float(candidate.resolved_human_score()),
                    "failed": failed,
                }
            )
    scores_path = tmp_path / "scores.jsonl"
    report_mod.write_scores(rows, scores_path)
    return dataset_path, scores_path


class TestMetaCommand:
    def test_perfect_metric_meta_100(self, tmp_path):
        dataset_path, scores_path = build_meta_dataset(tmp_path)
        out = tmp_path / "report"
        code = main(
            [
                "meta",
                "--scores",
                str(scores_path),
                "--dataset",
                str(dataset_path),
                "--out",
                str(out),
                "--name",
                "oracle-copy",
            ]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["overall"]["meta"] == pytest.approx(100.0)
        assert report["metric"] == "oracle-copy"
        for direction in ("ZhEn", "EnZh"):
            body = report["overall"]["directions"][direction]
            assert body["sys_acc"] == pytest.approx(100.0)
            assert body["seg_acc_t"] == pytest.approx(100.0)
            assert body["acc_t_epsilon"] == 0.0
        # per-domain breakdown present
        assert set(report["domains"]) == {"SNS", "Poetry"}
        # delimited + figure outputs
        assert (out / "report.csv").exists()
        assert (out / "report.png").exists()
        header = (out / "report.csv").read_text().splitlines()[0]
        assert header.startswith(
            "scope,meta,ZhEn_sys_acc,ZhEn_sys_pearson,ZhEn_sys_spearman,"
            "ZhEn_seg_acc_t,ZhEn_seg_pearson,ZhEn_seg_spearman,EnZh_sys_acc"
        )

    def test_failed_candidate_drops_segment_pairwise(self, tmp_path):
        dataset_path, scores_path = build_meta_dataset(tmp_path, with_failure=True)
        out = tmp_path / "report"
        assert (
            main(
                ["meta", "--scores", str(scores_path), "--dataset", str(dataset_path), "--out", str(out)]
            )
            == 0
        )
        report = json.loads((out / "report.json").read_text())
        assert report["failed_candidates"] == 1
        assert report["overall"]["excluded_segments"] == 1
        assert report["overall"]["directions"]["ZhEn"]["n_segments"] == 2
        assert report["overall"]["directions"]["EnZh"]["n_segments"] == 3
        # still perfect on the surviving cells
        assert report["overall"]["meta"] == pytest.approx(100.0)

    def test_missing_pair_is_shape_mismatch(self, tmp_path, capsys):
        dataset_path, scores_path = build_meta_dataset(tmp_path)
        lines = scores_path.read_text().splitlines()
        scores_path.write_text("\n".join(lines[:-1]) + "\n")
        code = main(
            ["meta", "--scores", str(scores_path), "--dataset", str(dataset_path), "--out", str(tmp_path / "r")]
        )
        assert code == 2
        assert "lacks" in capsys.readouterr().err

    def test_action_summary_from_sidecar_trajectories(self, tmp_path, replay_run):
        dataset_path, fixture_path = replay_run
        out_eval = tmp_path / "eval_out"
        main(
            [
                "evaluate",
                "--dataset",
                str(dataset_path),
                "--fixtures",
                str(fixture_path),
                "--out",
                str(out_eval),
            ]
        )
        out_report = tmp_path / "report_out"
        code = main(
            [
                "meta",
                "--scores",
                str(out_eval / "scores.jsonl"),
                "--dataset",
                str(dataset_path),
                "--out",
                str(out_report),
            ]
        )
        assert code == 0
        report = json.loads((out_report / "report.json").read_text())
        summary = report["action_summary"]
        assert summary["trajectories"] == 6
        assert summary["actions_by_round"]["1"].get("search") == 2
        assert (out_report / "agent_actions.png").exists()


class TestIaaCommand:
    def test_matrix_and_heatmap(self, tmp_path):
        records = [
            make_segment(
                seg_id=f"s{i}",
                candidates=[
                    make_candidate(
                        f"sys{k}", f"t{k}", [("ann1", (k + i) % 5), ("ann2", (k * 2 + i) % 5)]
                    )
                    for k in range(4)
                ],
            )
            for i in range(3)
        ]
        dataset_path = tmp_path / "dataset.jsonl"
        save_dataset(records, dataset_path)
        out = tmp_path / "iaa_out"
        code = main(["iaa", "--dataset", str(dataset_path), "--out", str(out)])
        assert code == 0
        iaa = json.loads((out / "iaa.json").read_text())
        assert iaa["annotators"] == ["ann1", "ann2"]
        matrix = iaa["matrix"]
        assert matrix[0][1] == matrix[1][0]
        assert (out / "iaa_heatmap.png").exists()

    def test_non_overlapping_pairs_null(self, tmp_path):
        records = [
            make_segment(
                seg_id="s1",
                candidates=[make_candidate("sys0", "t", [("ann1", 1)]), make_candidate("sys1", "t", [("ann1", 3)])],
            ),
            make_segment(
                seg_id="s2",
                candidates=[make_candidate("sys0", "t", [("ann2", 2)]), make_candidate("sys1", "t", [("ann2", 0)])],
            ),
        ]
        dataset_path = tmp_path / "dataset.jsonl"
        save_dataset(records, dataset_path)
        out = tmp_path / "iaa_out"
        assert main(["iaa", "--dataset", str(dataset_path), "--out", str(out)]) == 0
        iaa = json.loads((out / "iaa.json").read_text())
        assert iaa["matrix"][0][1] is None
