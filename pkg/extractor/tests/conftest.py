from __future__ import annotations

import json
from pathlib import Path

import pytest
import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import Whitespace
from tokenizers.trainers import WordLevelTrainer
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

CONTEXT_BLOCK = "Retrieved knowledge: the idiom '{surface}' means: {meaning}\n\n"

INSTANCES = [
    {
        "id": "xx-en-0000",
        "surface": "kick the bucket",
        "sentence": "he will kick the bucket soon",
        "meaning": "to die",
    },
    {
        "id": "xx-en-0001",
        "surface": "spill the beans",
        "sentence": "do not spill the beans today",
        "meaning": "to reveal a secret",
    },
    {
        "id": "xx-en-0002",
        "surface": "under the weather",
        "sentence": "she felt under the weather yesterday",
        "meaning": "slightly ill",
    },
]


def make_prompt(instance: dict, with_context: bool) -> str:
    block = (
        CONTEXT_BLOCK.format(surface=instance["surface"], meaning=instance["meaning"])
        if with_context
        else ""
    )
    return (
        "Translate the sentence into English.\n\n"
        f"{block}Sentence: {instance['sentence']}\n"
    )


@pytest.fixture(scope="session")
def corpus_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("data") / "corpus.jsonl"
    with path.open("w", encoding="utf-8") as handle:
        for instance in INSTANCES:
            handle.write(
                json.dumps(
                    {
                        "id": instance["id"],
                        "source_lang": "xx",
                        "target_lang": "en",
                        "source_sentence": instance["sentence"],
                        "idiom_surface": instance["surface"],
                        "gold_meaning": instance["meaning"],
                        "reference_translation": "reference",
                        "provenance": "fixture",
                    }
                )
                + "\n"
            )
    return path


@pytest.fixture(scope="session")
def tasks_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("data") / "tasks.jsonl"
    with path.open("w", encoding="utf-8") as handle:
        for instance in INSTANCES:
            for condition, with_context in (("none", False), ("opposite", True)):
                handle.write(
                    json.dumps(
                        {
                            "instance_id": instance["id"],
                            "condition": condition,
                            "context_text": instance["meaning"] if with_context else None,
                            "prompt": make_prompt(instance, with_context),
                        }
                    )
                    + "\n"
                )
    return path


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> Path:
    """A small causal LM with open (locally generated) weights and a
    word-level tokenizer trained on the fixture prompts."""
    model_dir = tmp_path_factory.mktemp("tiny-model")
    texts = [make_prompt(inst, with_context) for inst in INSTANCES for with_context in (False, True)]

    tokenizer = Tokenizer(WordLevel(unk_token="[UNK]"))
    tokenizer.pre_tokenizer = Whitespace()
    trainer = WordLevelTrainer(special_tokens=["[UNK]", "[EOS]"])
    tokenizer.train_from_iterator(texts, trainer)
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tokenizer,
        unk_token="[UNK]",
        eos_token="[EOS]",
        pad_token="[EOS]",
    )
    fast.save_pretrained(model_dir)

    torch.manual_seed(20240811)
    config = GPT2Config(
        vocab_size=len(fast),
        n_positions=256,
        n_embd=32,
        n_layer=2,
        n_head=2,
        bos_token_id=fast.eos_token_id,
        eos_token_id=fast.eos_token_id,
    )
    model = GPT2LMHeadModel(config)
    model.save_pretrained(model_dir)
    return model_dir
