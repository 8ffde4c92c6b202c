"""Attention-trace analysis: per-role attention allocation over input
segments and idiom-span confidence (mean token entropy) from standardized
generation traces."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import DataError

SCHEMA_VERSION = "trace/v1"
ROLES = ("idiom", "context", "other")
ATTN_SHARE_TOLERANCE = 1e-4

# Argmax ties inside a token prefer the non-idiom roles so the aligned span
# stays conservative.
_TIE_PRIORITY = {"other": 0, "context": 1, "idiom": 2}


class TraceError(DataError):
    pass


@dataclass(frozen=True)
class Segment:
    role: str
    start: int
    end: int


@dataclass(frozen=True)
class TargetToken:
    token: str
    entropy_nats: float
    attn_share: dict[str, float]


@dataclass
class Trace:
    instance_id: str
    condition: str
    model_id: str
    input_segments: list[Segment]
    target_tokens: list[TargetToken]

    def validate(self) -> None:
        spans = sorted(self.input_segments, key=lambda s: s.start)
        position = 0
        for segment in spans:
            if segment.role not in ROLES:
                raise TraceError(f"unknown segment role {segment.role!r}")
            if segment.start != position:
                raise TraceError(
                    f"segments must be disjoint and cover the input; got a gap or "
                    f"overlap at position {segment.start} (expected {position})"
                )
            if segment.end <= segment.start:
                raise TraceError(f"empty segment {segment}")
            position = segment.end
        for index, token in enumerate(self.target_tokens):
            if token.entropy_nats < 0 or not math.isfinite(token.entropy_nats):
                raise TraceError(f"token {index}: entropy {token.entropy_nats} invalid")
            shares = [token.attn_share.get(role, 0.0) for role in ROLES]
            if any(s < 0 for s in shares):
                raise TraceError(f"token {index}: negative attention share")
            if abs(sum(shares) - 1.0) > ATTN_SHARE_TOLERANCE:
                raise TraceError(
                    f"token {index}: attention shares sum to {sum(shares)}, "
                    f"expected 1 within {ATTN_SHARE_TOLERANCE}"
                )

    def to_record(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "instance_id": self.instance_id,
            "condition": self.condition,
            "model_id": self.model_id,
            "input_segments": [
                {"role": s.role, "start": s.start, "end": s.end} for s in self.input_segments
            ],
            "target_tokens": [
                {
                    "token": t.token,
                    "entropy_nats": t.entropy_nats,
                    "attn_share": {role: t.attn_share.get(role, 0.0) for role in ROLES},
                }
                for t in self.target_tokens
            ],
        }

    @classmethod
    def from_record(cls, record: dict) -> "Trace":
        schema = record.get("schema")
        if schema != SCHEMA_VERSION:
            raise TraceError(f"unsupported trace schema {schema!r}, expected {SCHEMA_VERSION!r}")
        return cls(
            instance_id=record["instance_id"],
            condition=record["condition"],
            model_id=record["model_id"],
            input_segments=[
                Segment(role=s["role"], start=s["start"], end=s["end"])
                for s in record["input_segments"]
            ],
            target_tokens=[
                TargetToken(
                    token=t["token"],
                    entropy_nats=t["entropy_nats"],
                    attn_share=dict(t["attn_share"]),
                )
                for t in record["target_tokens"]
            ],
        )


@dataclass(frozen=True)
class AttentionAllocation:
    idiom_share: float
    context_share: float
    other_share: float
    token_count: int

    def to_record(self) -> dict:
        return {
            "idiom_share": self.idiom_share,
            "context_share": self.context_share,
            "other_share": self.other_share,
            "token_count": self.token_count,
        }


def attention_allocation(trace: Trace) -> AttentionAllocation:
    """Mean attention share per role across all target tokens."""
    trace.validate()
    if not trace.target_tokens:
        raise TraceError(f"{trace.instance_id}: no target tokens")
    count = len(trace.target_tokens)
    means = {
        role: sum(t.attn_share.get(role, 0.0) for t in trace.target_tokens) / count
        for role in ROLES
    }
    return AttentionAllocation(
        idiom_share=means["idiom"],
        context_share=means["context"],
        other_share=means["other"],
        token_count=count,
    )


@dataclass(frozen=True)
class IdiomSpan:
    start: int
    end: int

    @property
    def empty(self) -> bool:
        return self.end <= self.start

    def __len__(self) -> int:
        return max(0, self.end - self.start)


def token_role(token: TargetToken) -> str:
    best = max(token.attn_share.get(role, 0.0) for role in ROLES)
    tied = [role for role in ROLES if token.attn_share.get(role, 0.0) == best]
    return min(tied, key=lambda role: _TIE_PRIORITY[role])


def align_idiom_span(trace: Trace) -> IdiomSpan:
    """Longest contiguous run of idiom-labeled target tokens (argmax role per
    token); equal-length runs break to the earliest. An empty span means no
    token aligned to the idiom."""
    trace.validate()
    labels = [token_role(t) for t in trace.target_tokens]
    best = IdiomSpan(0, 0)
    run_start = None
    for index, label in enumerate(labels + ["other"]):
        if label == "idiom":
            if run_start is None:
                run_start = index
        elif run_start is not None:
            if index - run_start > len(best):
                best = IdiomSpan(run_start, index)
            run_start = None
    return best


@dataclass(frozen=True)
class SpanEntropyReport:
    span: IdiomSpan
    mean_entropy: float
    fidelity: float | None = None

    def to_record(self) -> dict:
        return {
            "span": [self.span.start, self.span.end],
            "mean_entropy": self.mean_entropy,
            "fidelity": self.fidelity,
        }


def span_confidence(
    trace: Trace, span: IdiomSpan, *, fidelity: float | None = None
) -> SpanEntropyReport:
    """Mean entropy over the span's tokens; lower means more confident."""
    if span.empty:
        raise TraceError(f"{trace.instance_id}: empty idiom span")
    if span.start < 0 or span.end > len(trace.target_tokens):
        raise TraceError(
            f"{trace.instance_id}: span [{span.start}, {span.end}) outside target "
            f"length {len(trace.target_tokens)}"
        )
    entropies = [t.entropy_nats for t in trace.target_tokens[span.start : span.end]]
    return SpanEntropyReport(
        span=span, mean_entropy=sum(entropies) / len(entropies), fidelity=fidelity
    )


def read_traces(path: str | Path) -> list[Trace]:
    """Load and validate a trace JSONL file; diagnostics carry line numbers."""
    path = Path(path)
    if not path.is_file():
        raise TraceError(f"cannot read traces from {path}")
    traces = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                trace = Trace.from_record(json.loads(line))
                trace.validate()
            except (KeyError, TypeError, ValueError, TraceError) as exc:
                raise TraceError(f"{path}:{line_no}: {exc}") from None
            traces.append(trace)
    return traces


def write_traces(traces: Iterable[Trace], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for trace in traces:
            handle.write(json.dumps(trace.to_record(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")
