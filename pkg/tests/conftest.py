from __future__ import annotations

import pytest

from ragmt.corpus import Dataset, IdiomInstance, LanguagePair, Tier
from ragmt.noise import NoiseKind, NoiseSet


def build_instance(
    idx: int = 0,
    pair_key: str = "fi-en",
    *,
    sentence: str | None = None,
    idiom: str | None = None,
    gold: str | None = None,
) -> IdiomInstance:
    src, tgt = pair_key.split("-")
    tier = {"fi-en": Tier.MEDIUM, "hi-en": Tier.LOW, "fr-en": Tier.HIGH}.get(pair_key, Tier.HIGH)
    idiom = idiom if idiom is not None else f"idiom-{idx}"
    sentence = sentence if sentence is not None else f"sentence {idx} ending with {idiom}"
    return IdiomInstance(
        id=f"{pair_key}-{idx:04d}",
        pair=LanguagePair(src, tgt, tier),
        source_sentence=sentence,
        idiom_surface=idiom,
        gold_meaning=gold if gold is not None else f"meaning {idx}",
        reference_translation=f"reference {idx}",
        provenance="test",
    )


def build_noise_set(instance: IdiomInstance) -> NoiseSet:
    return NoiseSet(
        instance_id=instance.id,
        meanings={
            NoiseKind.STRUCT: " ".join(reversed(instance.gold_meaning.split())),
            NoiseKind.LITERAL: f"word-for-word rendering of {instance.idiom_surface}",
            NoiseKind.SEMANTIC: f"approximate rendering of {instance.idiom_surface}",
            NoiseKind.OPPOSITE: f"the opposite of {instance.gold_meaning}",
        },
        generator_id="fixture",
    )


@pytest.fixture
def small_dataset() -> Dataset:
    return Dataset(instances=[build_instance(i) for i in range(3)])


@pytest.fixture
def table1_instance() -> IdiomInstance:
    return IdiomInstance(
        id="fi-en-0001",
        pair=LanguagePair("fi", "en", Tier.MEDIUM),
        source_sentence="Rahat menivät kankkulan kaivoon.",
        idiom_surface="kankkulan kaivoon",
        gold_meaning="down the drain",
        reference_translation="The money went down the drain.",
        provenance="test",
    )


@pytest.fixture
def table1_noise(table1_instance) -> NoiseSet:
    return NoiseSet(
        instance_id=table1_instance.id,
        meanings={
            NoiseKind.STRUCT: "drain the down",
            NoiseKind.LITERAL: "to Kankkula's well",
            NoiseKind.SEMANTIC: "to Kankkula's house",
            NoiseKind.OPPOSITE: "to good use",
        },
        generator_id="fixture",
    )
