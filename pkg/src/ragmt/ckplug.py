"""Training-free mitigation: entropy-based confidence-gain gating with
alpha-blending of context-aware and internal token distributions during
greedy decoding."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from .errors import DataError
from .gateway import (
    DecodeParams,
    StepwiseModel,
    TokenDistribution,
    TranslationRecord,
    next_token_distribution,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlendConfig:
    """Entropy unit is nats throughout."""

    alpha: float = 0.5
    top_k: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class StepLog:
    step: int
    cg: float
    branch: str  # "blend" iff cg > 0, else "suppress"
    token: str
    h_internal: float
    h_context: float

    def to_record(self) -> dict:
        return {
            "step": self.step,
            "cg": self.cg,
            "branch": self.branch,
            "token": self.token,
            "h_internal": self.h_internal,
            "h_context": self.h_context,
        }


def confidence_gain(p_context: TokenDistribution, p_internal: TokenDistribution) -> float:
    """Entropy drop caused by the context: H(internal) - H(context).

    Positive values mean the context reduces next-token uncertainty. Zero
    probability terms contribute nothing, so the union-support zero-fill is
    implicit."""
    return p_internal.entropy() - p_context.entropy()


def blend_step(
    p_context: TokenDistribution,
    p_internal: TokenDistribution,
    cfg: BlendConfig,
) -> TokenDistribution:
    """alpha-blend over the union support when the confidence gain is
    positive; otherwise return the internal distribution unchanged (the
    context is fully suppressed, including at CG = 0)."""
    if confidence_gain(p_context, p_internal) <= 0.0:
        return p_internal
    support = set(p_context.entries) | set(p_internal.entries)
    mixed = {
        token: cfg.alpha * p_context.probability(token)
        + (1.0 - cfg.alpha) * p_internal.probability(token)
        for token in sorted(support)
    }
    total = sum(mixed.values())
    return TokenDistribution({token: value / total for token, value in mixed.items()})


def decode_with_ckplug(
    model: StepwiseModel,
    prompt_with_context: str,
    prompt_without_context: str,
    params: DecodeParams,
    cfg: BlendConfig,
    *,
    instance_id: str = "",
    condition: str = "",
) -> tuple[TranslationRecord, list[StepLog]]:
    """Greedy decode that, at every step, queries both prompt variants with
    the shared emitted prefix, gates on confidence gain, and emits the argmax
    of the blended distribution. Stops at the end token or max_tokens."""
    emitted: list[str] = []
    logs: list[StepLog] = []
    flags: list[str] = []
    for step in range(params.max_tokens):
        try:
            p_context, _ = next_token_distribution(
                model, prompt_with_context, emitted, top_k=cfg.top_k
            )
            p_internal, _ = next_token_distribution(
                model, prompt_without_context, emitted, top_k=cfg.top_k
            )
        except Exception as exc:
            flags.append("partial")
            logger.warning("distribution query failed at step %d: %s", step, exc)
            break
        cg = confidence_gain(p_context, p_internal)
        blended = blend_step(p_context, p_internal, cfg)
        token = blended.argmax()
        logs.append(
            StepLog(
                step=step,
                cg=cg,
                branch="blend" if cg > 0 else "suppress",
                token=token,
                h_internal=p_internal.entropy(),
                h_context=p_context.entropy(),
            )
        )
        emitted.append(token)
        if token == model.end_token:
            break
    body = [token for token in emitted if token != model.end_token]
    record = TranslationRecord(
        instance_id=instance_id,
        condition=condition,
        model_id=model.model_id,
        params=params,
        output_translation=" ".join(body),
        raw_response=" ".join(emitted),
        reasoning_text="",
        cache_key="",
        timestamp=datetime.now(timezone.utc).isoformat(),
        flags=flags,
    )
    return record, logs


def write_step_logs(logs: Iterable[StepLog], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for log in logs:
            handle.write(json.dumps(log.to_record(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")
