"""CLI: join tasks with the corpus, run the model, emit trace/v1 JSONL."""

from __future__ import annotations

import argparse
import logging
import sys

from .extract import ExtractionError, extract
from .jobs import ExtractionJob, JobError, load_items


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trace-extract",
        description="Emit per-token attention/entropy traces for translation tasks.",
    )
    parser.add_argument("--model", required=True, help="model id or local checkpoint path")
    parser.add_argument("--tasks", required=True, help="TranslationTask JSONL")
    parser.add_argument("--corpus", required=True, help="canonical corpus JSONL (idiom surfaces)")
    parser.add_argument("--out", required=True, help="output trace JSONL path")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-tokens", type=int, default=64)
    parser.add_argument(
        "--layers", default=None, help="comma-separated layer subset (default: all layers)"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    layers = [int(part) for part in args.layers.split(",")] if args.layers else None
    try:
        items = load_items(args.tasks, args.corpus)
        job = ExtractionJob(
            model_id=args.model,
            items=items,
            output_path=args.out,
            max_new_tokens=args.max_tokens,
            layers=layers,
            device=args.device,
        )
        out = extract(job)
    except (JobError, ExtractionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"traces -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
