"""Helpers for offline pipeline tests: corpus fixtures and run configs."""

from __future__ import annotations

import json
from pathlib import Path


def write_offline_corpus(path: Path, n: int = 20) -> Path:
    """Synthetic two-pair corpus; idioms sit at the end of each sentence so
    the mock translator's no-context fallback recovers them exactly."""
    rows = []
    for i in range(n):
        pair = ("fi", "en") if i % 2 == 0 else ("hi", "en")
        idiom = f"idiom-{i}"
        rows.append(
            {
                "id": f"{pair[0]}-{pair[1]}-{i:04d}",
                "source_lang": pair[0],
                "target_lang": pair[1],
                "source_sentence": f"source sentence {i} ends with {idiom}",
                "idiom_surface": idiom,
                "gold_meaning": f"true meaning {i}",
                "reference_translation": f"reference translation {i}",
                "provenance": "offline-fixture",
            }
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def write_run_config(
    tmp_path: Path,
    *,
    corpus: Path,
    output_dir: Path,
    cache_dir: Path,
    n: int = 20,
    seed: int = 7,
    judge_runs: int = 4,
    name: str = "config.json",
) -> Path:
    config = {
        "dataset": {"path": str(corpus), "format": "jsonl"},
        "sample": {"n": n, "seed": seed},
        "conditions": ["none", "gold", "struct", "literal", "semantic", "opposite"],
        "translator": {"kind": "mock"},
        "generator": {"kind": "mock"},
        "judge": {"kind": "stub"},
        "judge_runs": judge_runs,
        "max_workers": 4,
        "cache_dir": str(cache_dir),
        "output_dir": str(output_dir),
    }
    path = tmp_path / name
    path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return path


def snapshot_tree(root: Path) -> dict[str, bytes]:
    return {
        str(path.relative_to(root)): path.read_bytes()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }
