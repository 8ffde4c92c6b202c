"""Core extraction: greedy decoding with attention capture, segment-level
attention shares (mean over heads and layers), and next-token entropy."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from .jobs import ExtractionItem, ExtractionJob

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "trace/v1"
ROLES = ("idiom", "context", "other")


class ExtractionError(RuntimeError):
    pass


def char_range_to_token_indices(
    offsets: list[tuple[int, int]], char_range: tuple[int, int]
) -> list[int]:
    """Token indices whose characters fall majority-inside the range.

    A boundary-straddling token is assigned to the side owning most of its
    characters; exact halves stay outside to keep segments conservative."""
    start, end = char_range
    indices = []
    for index, (a, b) in enumerate(offsets):
        if b <= a:  # special tokens carry empty offsets
            continue
        overlap = max(0, min(b, end) - max(a, start))
        if overlap > (b - a) / 2:
            indices.append(index)
    return indices


def _contiguous(indices: list[int]) -> bool:
    return all(b == a + 1 for a, b in zip(indices, indices[1:]))


def build_role_segments(
    prompt_len: int, idiom_tokens: list[int], context_tokens: list[int]
) -> list[dict]:
    """Compress per-position roles into contiguous segments covering the
    prompt."""
    roles = ["other"] * prompt_len
    for index in idiom_tokens:
        roles[index] = "idiom"
    for index in context_tokens:
        roles[index] = "context"
    segments = []
    start = 0
    for position in range(1, prompt_len + 1):
        if position == prompt_len or roles[position] != roles[start]:
            segments.append({"role": roles[start], "start": start, "end": position})
            start = position
    return segments


class TraceExtractor:
    def __init__(self, model_id: str, device: str = "cpu", layers: list[int] | None = None):
        self.model_id = model_id
        self.device = device
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModelForCausalLM.from_pretrained(model_id, attn_implementation="eager")
        self.model.to(device)
        self.model.eval()
        num_layers = self.model.config.num_hidden_layers
        if layers is None:
            self.layers = list(range(num_layers))
        else:
            bad = [l for l in layers if not 0 <= l < num_layers]
            if bad:
                raise ExtractionError(f"layer indices {bad} outside [0, {num_layers})")
            self.layers = list(layers)

    def _segment_tokens(self, item: ExtractionItem, offsets) -> tuple[list[int], list[int]]:
        idiom_tokens: list[int] = []
        context_tokens: list[int] = []
        if item.idiom_range is None:
            raise ExtractionError(f"{item.instance_id}: idiom not found in prompt")
        idiom_tokens = char_range_to_token_indices(offsets, item.idiom_range)
        if not idiom_tokens or not _contiguous(idiom_tokens):
            raise ExtractionError(
                f"{item.instance_id}: tokenization cannot realize the idiom segment "
                f"boundary at chars {item.idiom_range}"
            )
        if item.context_range is not None:
            context_tokens = char_range_to_token_indices(offsets, item.context_range)
            if not context_tokens or not _contiguous(context_tokens):
                raise ExtractionError(
                    f"{item.instance_id}: tokenization cannot realize the context "
                    f"segment boundary at chars {item.context_range}"
                )
        if set(idiom_tokens) & set(context_tokens):
            raise ExtractionError(
                f"{item.instance_id}: idiom and context segments overlap after tokenization"
            )
        return idiom_tokens, context_tokens

    @torch.no_grad()
    def extract_one(self, item: ExtractionItem, max_new_tokens: int = 64) -> dict:
        encoded = self.tokenizer(
            item.prompt, return_offsets_mapping=True, return_tensors="pt"
        )
        offsets = [tuple(pair) for pair in encoded["offset_mapping"][0].tolist()]
        idiom_tokens, context_tokens = self._segment_tokens(item, offsets)
        prompt_len = encoded["input_ids"].shape[1]
        segments = build_role_segments(prompt_len, idiom_tokens, context_tokens)

        input_ids = encoded["input_ids"].to(self.device)
        eos_id = self.tokenizer.eos_token_id
        target_tokens = []
        for _ in range(max_new_tokens):
            outputs = self.model(input_ids, output_attentions=True, use_cache=False)
            logits = outputs.logits[0, -1, :]
            log_probs = torch.log_softmax(logits.double(), dim=-1)
            probs = log_probs.exp()
            entropy = float(-(probs * log_probs).sum())

            # attentions: per layer [batch, heads, query, key]; take the last
            # query position over the prompt keys, mean over heads and layers.
            stacked = torch.stack(
                [outputs.attentions[layer][0, :, -1, :prompt_len] for layer in self.layers]
            )
            prompt_attention = stacked.mean(dim=(0, 1)).double()
            mass = {
                "idiom": float(prompt_attention[idiom_tokens].sum()) if idiom_tokens else 0.0,
                "context": float(prompt_attention[context_tokens].sum())
                if context_tokens
                else 0.0,
            }
            total = float(prompt_attention.sum())
            mass["other"] = max(total - mass["idiom"] - mass["context"], 0.0)
            share = {
                role: (mass[role] / total if total > 0 else 0.0) for role in ROLES
            }

            next_id = int(torch.argmax(logits))
            target_tokens.append(
                {
                    "token": self.tokenizer.decode([next_id]),
                    "entropy_nats": entropy,
                    "attn_share": share,
                }
            )
            input_ids = torch.cat(
                [input_ids, torch.tensor([[next_id]], device=self.device)], dim=1
            )
            if eos_id is not None and next_id == eos_id:
                break

        return {
            "schema": SCHEMA_VERSION,
            "instance_id": item.instance_id,
            "condition": item.condition,
            "model_id": self.model_id,
            "input_segments": segments,
            "target_tokens": target_tokens,
        }


def extract(job: ExtractionJob) -> Path:
    """Run a job, writing one trace/v1 record per task as it completes so an
    abort leaves a partial but valid file. Items whose segments cannot be
    realized by the tokenizer are skipped with a diagnostic."""
    extractor = TraceExtractor(job.model_id, device=job.device, layers=job.layers)
    out_path = Path(job.output_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    skipped = 0
    with out_path.open("w", encoding="utf-8") as handle:
        for item in job.items:
            try:
                record = extractor.extract_one(item, max_new_tokens=job.max_new_tokens)
            except ExtractionError as exc:
                skipped += 1
                logger.warning("skipping %s: %s", item.instance_id, exc)
                continue
            except (RuntimeError, MemoryError) as exc:
                raise ExtractionError(
                    f"aborting after {written} records ({out_path} holds the partial "
                    f"output): {exc}"
                ) from exc
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            handle.flush()
            written += 1
    logger.info("wrote %d traces (%d skipped) -> %s", written, skipped, out_path)
    return out_path
