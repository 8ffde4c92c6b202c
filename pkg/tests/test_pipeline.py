from __future__ import annotations

import json

import pytest

from ragmt.errors import ConfigError
from ragmt.pipeline import Run, RunConfig, run

from .pipeline_utils import snapshot_tree, write_offline_corpus, write_run_config


@pytest.fixture
def offline_setup(tmp_path):
    corpus = write_offline_corpus(tmp_path / "corpus.jsonl", n=20)
    cache_dir = tmp_path / "cache"

    def make(out_name: str, **kwargs):
        out_dir = tmp_path / out_name
        return write_run_config(
            tmp_path,
            corpus=corpus,
            output_dir=out_dir,
            cache_dir=cache_dir,
            name=f"{out_name}.json",
            **kwargs,
        ), out_dir

    return make


class TestFullRun:
    def test_offline_run_produces_all_artifacts(self, offline_setup):
        config_path, out_dir = offline_setup("out1")
        results = run(RunConfig.from_file(config_path))
        assert results == out_dir
        for name in (
            "dataset.jsonl",
            "rejects.jsonl",
            "sample.jsonl",
            "noise.jsonl",
            "tasks.jsonl",
            "translations.jsonl",
            "fidelity.jsonl",
            "car.jsonl",
            "aggregate.json",
            "car_rates.json",
            "run_ledger.json",
        ):
            assert (out_dir / name).is_file(), name
        tasks = (out_dir / "tasks.jsonl").read_text().splitlines()
        assert len(tasks) == 20 * 6
        translations = (out_dir / "translations.jsonl").read_text().splitlines()
        assert len(translations) == 120
        car = (out_dir / "car.jsonl").read_text().splitlines()
        assert len(car) == 20 * 5

    def test_none_condition_translated_first(self, offline_setup):
        config_path, out_dir = offline_setup("out_order")
        run(RunConfig.from_file(config_path))
        conditions = [
            json.loads(line)["condition"]
            for line in (out_dir / "translations.jsonl").read_text().splitlines()
        ]
        first_contextual = conditions.index(next(c for c in conditions if c != "none"))
        assert all(c == "none" for c in conditions[:first_contextual])
        assert conditions[:20] == ["none"] * 20

    def test_gold_rows_outscore_none_rows(self, offline_setup):
        # The mock translator embeds the provided meaning, so the stub judge
        # rates gold-context cells at 3 and bare cells at 0.
        config_path, out_dir = offline_setup("out_scores")
        run(RunConfig.from_file(config_path))
        rows = json.loads((out_dir / "aggregate.json").read_text())
        by_condition = {row["condition"]: row for row in rows}
        assert by_condition["gold"]["avg_fidelity"] == 3.0
        assert by_condition["none"]["avg_fidelity"] == 0.0

    def test_warm_cache_runs_byte_identical(self, offline_setup):
        first_config, _ = offline_setup("warmup")
        run(RunConfig.from_file(first_config))
        second_config, second_dir = offline_setup("out2")
        third_config, third_dir = offline_setup("out3")
        run(RunConfig.from_file(second_config))
        run(RunConfig.from_file(third_config))
        assert snapshot_tree(second_dir) == snapshot_tree(third_dir)

    def test_warm_cache_serves_every_translation(self, offline_setup):
        first_config, _ = offline_setup("cold")
        run(RunConfig.from_file(first_config))
        second_config, second_dir = offline_setup("warm")
        run(RunConfig.from_file(second_config))
        ledger = json.loads((second_dir / "run_ledger.json").read_text())
        translate_stage = ledger["stages"]["translate"]
        assert translate_stage["cache_hits"] == translate_stage["translations"] == 120

    def test_resume_skips_completed_stages(self, offline_setup):
        config_path, out_dir = offline_setup("resume")
        config = RunConfig.from_file(config_path)
        run(config)
        (out_dir / "aggregate.json").unlink()
        (out_dir / "car_rates.json").unlink()
        run(config)
        ledger = json.loads((out_dir / "run_ledger.json").read_text())
        for stage in ("ingest", "sample", "synth", "expand", "translate", "judge", "car"):
            assert ledger["stages"][stage]["status"] == "skipped", stage
        assert ledger["stages"]["aggregate"]["status"] == "computed"

    def test_ledger_artifact_digests_cover_outputs(self, offline_setup):
        config_path, out_dir = offline_setup("ledger")
        run(RunConfig.from_file(config_path))
        ledger = json.loads((out_dir / "run_ledger.json").read_text())
        assert "aggregate.json" in ledger["artifacts"]
        assert all(len(digest) == 64 for digest in ledger["artifacts"].values())


class TestConfigValidation:
    def test_missing_dataset_path(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"dataset": {"path": "nope.jsonl"}}))
        with pytest.raises(ConfigError, match="does not exist"):
            RunConfig.from_file(config)

    def test_http_judge_requires_endpoint(self, tmp_path):
        corpus = write_offline_corpus(tmp_path / "corpus.jsonl", n=2)
        raw = {
            "dataset": {"path": str(corpus)},
            "judge": {"kind": "http"},
            "generator": {"kind": "mock"},
        }
        config = tmp_path / "config.json"
        config.write_text(json.dumps(raw))
        with pytest.raises(ConfigError, match="endpoint"):
            RunConfig.from_file(config)

    def test_noise_conditions_require_generator(self, tmp_path):
        corpus = write_offline_corpus(tmp_path / "corpus.jsonl", n=2)
        raw = {
            "dataset": {"path": str(corpus)},
            "conditions": ["none", "opposite"],
            "generator": None,
        }
        config = tmp_path / "config.json"
        config.write_text(json.dumps(raw))
        with pytest.raises(ConfigError, match="generator"):
            RunConfig.from_file(config)

    def test_invalid_json_config(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            RunConfig.from_file(config)

    def test_unknown_condition(self, tmp_path):
        corpus = write_offline_corpus(tmp_path / "corpus.jsonl", n=2)
        raw = {"dataset": {"path": str(corpus)}, "conditions": ["none", "bogus"]}
        config = tmp_path / "config.json"
        config.write_text(json.dumps(raw))
        with pytest.raises(ConfigError, match="bogus"):
            RunConfig.from_file(config)

    def test_none_baseline_always_included(self, tmp_path):
        corpus = write_offline_corpus(tmp_path / "corpus.jsonl", n=2)
        raw = {
            "dataset": {"path": str(corpus)},
            "conditions": ["gold"],
            "generator": {"kind": "mock"},
        }
        config = tmp_path / "config.json"
        config.write_text(json.dumps(raw))
        loaded = RunConfig.from_dict(json.loads(config.read_text()), base_dir=tmp_path)
        assert [c.value for c in loaded.conditions] == ["none", "gold"]
