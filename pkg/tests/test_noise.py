from __future__ import annotations

import pytest

from ragmt.corpus import Dataset
from ragmt.errors import ClientError
from ragmt.gateway import MockNoiseGenerator
from ragmt.noise import (
    NoiseError,
    NoiseKind,
    NoiseSet,
    noise_prompt,
    read_noise_sets,
    synthesize_noise,
    synthesize_set,
    validate_noise,
    write_noise_sets,
)

from .conftest import build_instance, build_noise_set


class FixedGenerator:
    def __init__(self, replies):
        self.model_id = "fixed"
        self.replies = list(replies)
        self.calls = 0

    def generate(self, prompt: str) -> str:
        self.calls += 1
        if not self.replies:
            raise AssertionError("generator exhausted")
        if len(self.replies) == 1:
            return self.replies[0]
        return self.replies.pop(0)


class FixedSimilarity:
    def __init__(self, table=None, default=0.5):
        self.table = table or {}
        self.default = default

    def similarity(self, first, second):
        return self.table.get((first, second), self.default)


class FixedNli:
    def __init__(self, label="contradiction"):
        self.label = label

    def classify(self, premise, hypothesis):
        return self.label


class TestSynthesizeNoise:
    def test_kinds_have_distinct_templates(self, table1_instance):
        prompts = {kind: noise_prompt(table1_instance, kind) for kind in NoiseKind}
        assert len(set(prompts.values())) == 4
        for prompt in prompts.values():
            assert "kankkulan kaivoon" in prompt
            assert "down the drain" in prompt
            assert "Finnish" in prompt

    def test_mock_generator_covers_all_kinds(self, table1_instance):
        generator = MockNoiseGenerator()
        noise = synthesize_set(table1_instance, generator)
        assert noise.meanings[NoiseKind.STRUCT] == "drain the down"
        assert "kankkulan kaivoon" in noise.meanings[NoiseKind.LITERAL]
        assert "kankkulan kaivoon" in noise.meanings[NoiseKind.SEMANTIC]
        assert noise.meanings[NoiseKind.OPPOSITE] == "the opposite of down the drain"
        assert noise.generator_id == "mock-noise"
        assert len(noise.prompt_hash) == 64

    def test_regenerates_when_candidate_equals_gold(self, table1_instance):
        generator = FixedGenerator(["Down The Drain", "to good use"])
        result = synthesize_noise(table1_instance, NoiseKind.OPPOSITE, generator)
        assert result == "to good use"
        assert generator.calls == 2

    def test_degenerate_noise_after_retries(self, table1_instance):
        generator = FixedGenerator(["down the drain"])
        with pytest.raises(NoiseError, match="degenerate noise"):
            synthesize_noise(table1_instance, NoiseKind.OPPOSITE, generator)

    def test_empty_generation_errors(self, table1_instance):
        generator = FixedGenerator([""])
        with pytest.raises(ClientError, match="empty generation"):
            synthesize_noise(table1_instance, NoiseKind.LITERAL, generator)

    def test_noise_set_requires_all_kinds(self):
        with pytest.raises(NoiseError, match="missing noise kinds"):
            NoiseSet(instance_id="x", meanings={NoiseKind.STRUCT: "a"})


class TestValidateNoise:
    def test_identity_struct_gives_zero_ter_unit_sim(self, small_dataset):
        noise_sets = {}
        for instance in small_dataset:
            noise = build_noise_set(instance)
            noise.meanings[NoiseKind.STRUCT] = instance.gold_meaning
            noise_sets[instance.id] = noise
        sim = FixedSimilarity(default=1.0)
        report = validate_noise(small_dataset, noise_sets, sim, FixedNli())
        assert report.overall.ter_struct == 0.0
        assert report.overall.sim_g_struct == 1.0

    def test_stub_clients_pass_through(self, small_dataset):
        noise_sets = {i.id: build_noise_set(i) for i in small_dataset}

        class SpectrumSim:
            def similarity(self, first, second):
                if "opposite" in second:
                    return 0.1
                if "approximate" in first and "approximate" not in second:
                    return 0.82
                if "approximate" in second and "word-for-word" in first:
                    return 0.82
                if "word-for-word" in second:
                    return 0.75
                if "approximate" in second:
                    return 0.73
                return 0.92

        class RatioNli:
            # 85% contradiction labels: flip on every 20th call starting at 17
            def __init__(self):
                self.n = 0

            def classify(self, premise, hypothesis):
                self.n += 1
                return "contradiction" if self.n % 20 < 17 else "neutral"

        report = validate_noise(small_dataset, noise_sets, SpectrumSim(), RatioNli())
        assert report.overall.sim_g_struct == pytest.approx(0.92)
        assert report.overall.sim_g_literal == pytest.approx(0.75)
        assert report.overall.sim_literal_semantic == pytest.approx(0.82)
        assert report.overall.sim_g_semantic == pytest.approx(0.73)
        assert report.overall.cr_opposite == pytest.approx(1.0)
        assert set(report.per_pair) == {"fi-en"}

    def test_contradiction_rate_is_exact_fraction(self):
        dataset = Dataset(instances=[build_instance(i) for i in range(4)])
        noise_sets = {i.id: build_noise_set(i) for i in dataset}

        class AlternatingNli:
            def __init__(self):
                self.n = 0

            def classify(self, premise, hypothesis):
                self.n += 1
                return "contradiction" if self.n % 2 == 1 else "entailment"

        report = validate_noise(dataset, noise_sets, FixedSimilarity(), AlternatingNli())
        assert report.overall.cr_opposite == pytest.approx(0.5)

    def test_out_of_range_similarity_clamped_and_flagged(self, small_dataset):
        noise_sets = {i.id: build_noise_set(i) for i in small_dataset}
        report = validate_noise(small_dataset, noise_sets, FixedSimilarity(default=1.3), FixedNli())
        assert report.overall.sim_g_struct == 1.0
        assert report.clamped

    def test_missing_noise_set_errors(self, small_dataset):
        with pytest.raises(NoiseError, match="missing noise set"):
            validate_noise(small_dataset, {}, FixedSimilarity(), FixedNli())

    def test_deterministic_given_fixed_clients(self, small_dataset):
        noise_sets = {i.id: build_noise_set(i) for i in small_dataset}
        first = validate_noise(small_dataset, noise_sets, FixedSimilarity(), FixedNli())
        second = validate_noise(small_dataset, noise_sets, FixedSimilarity(), FixedNli())
        assert first.to_dict() == second.to_dict()


def test_noise_set_roundtrip(tmp_path, small_dataset):
    noise_sets = {i.id: build_noise_set(i) for i in small_dataset}
    path = tmp_path / "noise.jsonl"
    write_noise_sets(noise_sets, path)
    loaded = read_noise_sets(path)
    assert {k: v.to_record() for k, v in loaded.items()} == {
        k: v.to_record() for k, v in noise_sets.items()
    }
