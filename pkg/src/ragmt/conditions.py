"""Six-condition experiment matrix: prompt assembly per context condition and
expansion of a dataset into translation tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Dataset, IdiomInstance
from .errors import DataError
from .noise import NoiseKind, NoiseSet
from .templates import language_name, load_template, render


class ConditionError(DataError):
    pass


class ContextCondition(str, Enum):
    NONE = "none"
    GOLD = "gold"
    STRUCT = "struct"
    LITERAL = "literal"
    SEMANTIC = "semantic"
    OPPOSITE = "opposite"


# Canonical row order for reports.
CONDITION_ORDER = (
    ContextCondition.NONE,
    ContextCondition.GOLD,
    ContextCondition.STRUCT,
    ContextCondition.LITERAL,
    ContextCondition.SEMANTIC,
    ContextCondition.OPPOSITE,
)

NOISE_CONDITIONS = {
    ContextCondition.STRUCT: NoiseKind.STRUCT,
    ContextCondition.LITERAL: NoiseKind.LITERAL,
    ContextCondition.SEMANTIC: NoiseKind.SEMANTIC,
    ContextCondition.OPPOSITE: NoiseKind.OPPOSITE,
}


@dataclass(frozen=True)
class TranslationTask:
    instance_id: str
    condition: ContextCondition
    context_text: str | None
    prompt: str

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "condition": self.condition.value,
            "context_text": self.context_text,
            "prompt": self.prompt,
        }

    @classmethod
    def from_record(cls, record: dict) -> "TranslationTask":
        return cls(
            instance_id=record["instance_id"],
            condition=ContextCondition(record["condition"]),
            context_text=record.get("context_text"),
            prompt=record["prompt"],
        )


def context_text_for(
    instance: IdiomInstance,
    condition: ContextCondition,
    noise: NoiseSet | None,
) -> str | None:
    if condition is ContextCondition.NONE:
        return None
    if condition is ContextCondition.GOLD:
        return instance.gold_meaning
    kind = NOISE_CONDITIONS[condition]
    if noise is None or kind not in noise.meanings:
        raise ConditionError(
            f"instance {instance.id}: no {kind.value} noise available for condition "
            f"{condition.value}"
        )
    return noise.meanings[kind]


def context_block(idiom_surface: str, context_text: str) -> str:
    return f"Retrieved knowledge: the idiom '{idiom_surface}' means: {context_text}\n\n"


def build_prompt(
    instance: IdiomInstance,
    condition: ContextCondition,
    template: str | None = None,
    *,
    noise: NoiseSet | None = None,
    templates_dir: str | Path | None = None,
) -> str:
    """Assemble the translation prompt for one (instance, condition) cell.

    The no-context condition omits the context block entirely; every other
    condition injects the meaning text for its kind.
    """
    if template is None:
        template = load_template("translation", templates_dir)
    text = context_text_for(instance, condition, noise)
    block = "" if text is None else context_block(instance.idiom_surface, text)
    return render(
        template,
        {
            "source_language": language_name(instance.pair.source_lang),
            "target_language": language_name(instance.pair.target_lang),
            "source_sentence": instance.source_sentence,
            "context_block": block,
        },
    )


def make_task(
    instance: IdiomInstance,
    condition: ContextCondition,
    *,
    noise: NoiseSet | None = None,
    template: str | None = None,
    templates_dir: str | Path | None = None,
) -> TranslationTask:
    return TranslationTask(
        instance_id=instance.id,
        condition=condition,
        context_text=context_text_for(instance, condition, noise),
        prompt=build_prompt(
            instance, condition, template, noise=noise, templates_dir=templates_dir
        ),
    )


def expand_matrix(
    dataset: Dataset,
    conditions: Sequence[ContextCondition],
    noise_sets: Mapping[str, NoiseSet] | None = None,
    *,
    templates_dir: str | Path | None = None,
) -> list[TranslationTask]:
    """Cross every instance with every requested condition, instance-major,
    conditions in the declared order."""
    noise_sets = noise_sets or {}
    template = load_template("translation", templates_dir)
    tasks: list[TranslationTask] = []
    for instance in dataset:
        for condition in conditions:
            tasks.append(
                make_task(
                    instance,
                    condition,
                    noise=noise_sets.get(instance.id),
                    template=template,
                )
            )
    return tasks


def write_tasks(tasks: Iterable[TranslationTask], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for task in tasks:
            handle.write(json.dumps(task.to_record(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")


def read_tasks(path: str | Path) -> list[TranslationTask]:
    path = Path(path)
    if not path.is_file():
        raise ConditionError(f"cannot read tasks from {path}")
    tasks = []
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                tasks.append(TranslationTask.from_record(json.loads(line)))
    return tasks
