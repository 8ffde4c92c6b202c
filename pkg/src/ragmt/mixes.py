"""Fine-tuning data mixes: three compositions over context conditions, with
the target always the correct reference translation, plus a training-file and
hyperparameter-manifest emitter."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .conditions import ContextCondition, build_prompt
from .corpus import Dataset
from .errors import DataError
from .noise import NoiseSet
from .templates import load_template


class MixError(DataError):
    pass


class MixStrategy(str, Enum):
    VANILLA = "vanilla"
    ALI = "ali"
    CDA = "cda"


# Every strategy renders each instance three times; only the condition mix
# differs. The adversarial mix doubles the opposite-meaning context, the
# contrastive one adds a gold-context copy.
COMPOSITIONS: dict[MixStrategy, tuple[ContextCondition, ...]] = {
    MixStrategy.VANILLA: (
        ContextCondition.NONE,
        ContextCondition.NONE,
        ContextCondition.NONE,
    ),
    MixStrategy.ALI: (
        ContextCondition.OPPOSITE,
        ContextCondition.OPPOSITE,
        ContextCondition.NONE,
    ),
    MixStrategy.CDA: (
        ContextCondition.OPPOSITE,
        ContextCondition.NONE,
        ContextCondition.GOLD,
    ),
}

TRAINING_HYPERPARAMETERS = {
    "adapter": "lora",
    "rank": 16,
    "scaling_factor": 16,
    "epochs": 50,
    "batch_size": 2,
    "learning_rate": 2e-4,
    "optimizer": "adamw",
    "schedule": "linear-warmup-cosine",
}


@dataclass(frozen=True)
class TrainExample:
    prompt: str
    completion: str
    condition: str
    instance_id: str
    copy_index: int

    def to_record(self) -> dict:
        return {
            "prompt": self.prompt,
            "completion": self.completion,
            "meta": {
                "instance_id": self.instance_id,
                "condition": self.condition,
                "copy_index": self.copy_index,
            },
        }


def build_mix(
    train_set: Dataset,
    noise_sets: Mapping[str, NoiseSet],
    strategy: MixStrategy,
    seed: int,
) -> list[TrainExample]:
    """Render each instance under the strategy's condition composition and
    shuffle globally with the seed. The completion is always the reference
    translation, even when the prompt carries a corrupted context."""
    if len(train_set) == 0:
        raise MixError("empty training set")
    template = load_template("translation")
    examples: list[TrainExample] = []
    for instance in train_set:
        for copy_index, condition in enumerate(COMPOSITIONS[strategy]):
            prompt = build_prompt(
                instance,
                condition,
                template,
                noise=noise_sets.get(instance.id),
            )
            examples.append(
                TrainExample(
                    prompt=prompt,
                    completion=instance.reference_translation,
                    condition=condition.value,
                    instance_id=instance.id,
                    copy_index=copy_index,
                )
            )
    random.Random(seed).shuffle(examples)
    return examples


def condition_counts(examples: Sequence[TrainExample]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for example in examples:
        counts[example.condition] = counts.get(example.condition, 0) + 1
    return dict(sorted(counts.items()))


def emit_manifest(
    examples: Sequence[TrainExample],
    strategy: MixStrategy,
    out_dir: str | Path,
    *,
    seed: int,
) -> tuple[Path, Path]:
    """Write the training JSONL and a manifest recording the fine-tune
    hyperparameters and mix composition. Re-emission with the same inputs is
    byte-identical."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_path = out_dir / f"train_{strategy.value}.jsonl"
    with train_path.open("w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(json.dumps(example.to_record(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")
    manifest = {
        "strategy": strategy.value,
        "composition": [c.value for c in COMPOSITIONS[strategy]],
        "seed": seed,
        "examples": len(examples),
        "condition_counts": condition_counts(examples),
        "hyperparameters": TRAINING_HYPERPARAMETERS,
        "train_file": train_path.name,
    }
    manifest_path = out_dir / f"manifest_{strategy.value}.json"
    manifest_path.write_text(
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return train_path, manifest_path
