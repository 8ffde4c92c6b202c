"""Extraction jobs: translation tasks joined with character ranges for the
idiom and context segments inside each prompt."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class JobError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionItem:
    instance_id: str
    condition: str
    prompt: str
    idiom_range: tuple[int, int] | None
    context_range: tuple[int, int] | None


@dataclass
class ExtractionJob:
    model_id: str
    items: list[ExtractionItem]
    output_path: Path
    max_new_tokens: int = 64
    layers: list[int] | None = None  # None = mean over all layers
    device: str = "cpu"


SENTENCE_MARKER = "Sentence: "
CONTEXT_MARKER = "means: "


def _find_range(prompt: str, needle: str, search_from: int = 0) -> tuple[int, int] | None:
    start = prompt.find(needle, search_from)
    if start < 0:
        return None
    return start, start + len(needle)


def locate_segments(
    prompt: str, idiom_surface: str, context_text: str | None
) -> tuple[tuple[int, int] | None, tuple[int, int] | None]:
    """Character ranges of the idiom (inside the sentence line) and of the
    context meaning (inside the context block), if present."""
    sentence_at = prompt.rfind(SENTENCE_MARKER)
    idiom_range = _find_range(prompt, idiom_surface, sentence_at if sentence_at >= 0 else 0)
    context_range = None
    if context_text:
        block_at = prompt.find(CONTEXT_MARKER)
        if block_at >= 0:
            context_range = _find_range(prompt, context_text, block_at)
    return idiom_range, context_range


def load_items(tasks_path: str | Path, corpus_path: str | Path) -> list[ExtractionItem]:
    """Join a TranslationTask JSONL with the canonical corpus (for idiom
    surfaces) into extraction items."""
    corpus_path = Path(corpus_path)
    if not corpus_path.is_file():
        raise JobError(f"cannot read corpus from {corpus_path}")
    surfaces: dict[str, str] = {}
    with corpus_path.open(encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                record = json.loads(line)
                surfaces[record["id"]] = record["idiom_surface"]

    tasks_path = Path(tasks_path)
    if not tasks_path.is_file():
        raise JobError(f"cannot read tasks from {tasks_path}")
    items = []
    with tasks_path.open(encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            task = json.loads(line)
            instance_id = task["instance_id"]
            surface = surfaces.get(instance_id)
            if surface is None:
                raise JobError(f"instance {instance_id} not present in corpus")
            idiom_range, context_range = locate_segments(
                task["prompt"], surface, task.get("context_text")
            )
            items.append(
                ExtractionItem(
                    instance_id=instance_id,
                    condition=task["condition"],
                    prompt=task["prompt"],
                    idiom_range=idiom_range,
                    context_range=context_range,
                )
            )
    return items
