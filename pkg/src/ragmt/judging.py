"""Judge-based scoring: fidelity ratings aggregated over sampled judge runs,
binary context-adoption judgements against the no-context baseline, table
aggregation, and correlation of automatic scores with human annotations."""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

from .conditions import CONDITION_ORDER, ContextCondition
from .errors import ClientError, DataError
from .gateway import ChatClient, DecodeParams, ResponseCache, cache_key
from .stats import Correlations, correlations
from .templates import load_template, render

logger = logging.getLogger(__name__)

FIDELITY_RUNS = 20
UNPARSEABLE_LIMIT = 0.25
RESAMPLE_CAP = 2

# Judges sample at temperature 1.0 so repeated runs can disagree.
JUDGE_PARAMS = DecodeParams(greedy=False, temperature=1.0, max_tokens=64)

_RATING_RE = re.compile(r"\b([0-3])\b")


class JudgeError(DataError):
    pass


@dataclass
class FidelityJudgement:
    instance_id: str
    condition: str
    votes: dict[int, int]
    score: int | None
    valid: bool
    runs: int
    unparseable: int = 0

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "condition": self.condition,
            "votes": {str(k): v for k, v in sorted(self.votes.items())},
            "score": self.score,
            "valid": self.valid,
            "runs": self.runs,
            "unparseable": self.unparseable,
        }

    @classmethod
    def from_record(cls, record: dict) -> "FidelityJudgement":
        return cls(
            instance_id=record["instance_id"],
            condition=record["condition"],
            votes={int(k): v for k, v in record["votes"].items()},
            score=record["score"],
            valid=record["valid"],
            runs=record["runs"],
            unparseable=record.get("unparseable", 0),
        )


@dataclass
class CARJudgement:
    instance_id: str
    condition: str
    adopted: int
    judge_rationale: str

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "condition": self.condition,
            "adopted": self.adopted,
            "judge_rationale": self.judge_rationale,
        }

    @classmethod
    def from_record(cls, record: dict) -> "CARJudgement":
        return cls(
            instance_id=record["instance_id"],
            condition=record["condition"],
            adopted=record["adopted"],
            judge_rationale=record.get("judge_rationale", ""),
        )


def mode_score(votes: Mapping[int, int]) -> int | None:
    """Most frequent rating; ties break to the lower score."""
    if not votes:
        return None
    top = max(votes.values())
    return min(r for r, count in votes.items() if count == top)


def _judge_call(
    judge: ChatClient,
    prompt: str,
    cache: ResponseCache | None,
    extra: dict,
) -> str:
    key = cache_key(judge.model_id, prompt, JUDGE_PARAMS, extra=extra)

    def produce() -> dict:
        return {"response": judge.complete(prompt, JUDGE_PARAMS)}

    if cache is None:
        return produce()["response"]
    value, _ = cache.fetch(key, produce)
    return value["response"]


def parse_rating(response: str) -> int | None:
    match = _RATING_RE.search(response)
    return int(match.group(1)) if match else None


def judge_fidelity(
    translation: str,
    meaning: str,
    judge: ChatClient,
    runs: int = FIDELITY_RUNS,
    *,
    instance_id: str = "",
    condition: str = "",
    cache: ResponseCache | None = None,
    templates_dir: str | Path | None = None,
    resample_cap: int = RESAMPLE_CAP,
    reference: str | None = None,
) -> FidelityJudgement:
    """Sample the judge `runs` times, parse one 0-3 rating per run (bounded
    re-sampling on unparseable output), and score by mode with downward
    tie-break. More than 25% failed runs flags the judgement invalid.

    The judge sees only (translation, meaning) unless a reference translation
    is passed explicitly."""
    template = load_template("fidelity_judge", templates_dir)
    prompt = render(template, {"meaning": meaning, "translation": translation})
    if reference is not None:
        prompt += f"\nReference translation (for calibration): {reference}\n"
    votes: dict[int, int] = {}
    failed_runs = 0
    for run in range(runs):
        rating = None
        for attempt in range(resample_cap + 1):
            extra = {"purpose": "fidelity", "run": run, "attempt": attempt}
            response = _judge_call(judge, prompt, cache, extra)
            rating = parse_rating(response)
            if rating is not None:
                break
        if rating is None:
            failed_runs += 1
        else:
            votes[rating] = votes.get(rating, 0) + 1
    valid = failed_runs <= UNPARSEABLE_LIMIT * runs and bool(votes)
    return FidelityJudgement(
        instance_id=instance_id,
        condition=condition,
        votes=votes,
        score=mode_score(votes),
        valid=valid,
        runs=runs,
        unparseable=failed_runs,
    )


def _presence(
    judge: ChatClient,
    meaning: str,
    translation: str,
    cache: ResponseCache | None,
    template: str,
    tag: str,
    resample_cap: int = RESAMPLE_CAP,
) -> tuple[bool, str]:
    prompt = render(template, {"meaning": meaning, "translation": translation})
    for attempt in range(resample_cap + 1):
        extra = {"purpose": "car", "side": tag, "attempt": attempt}
        response = _judge_call(judge, prompt, cache, extra).strip()
        lowered = response.casefold()
        if lowered.startswith("yes"):
            return True, response
        if lowered.startswith("no"):
            return False, response
    raise ClientError(f"presence judge unparseable after {resample_cap + 1} attempts: {response!r}")


def judge_car(
    translation: str,
    baseline_translation: str | None,
    context_text: str,
    judge: ChatClient,
    *,
    instance_id: str = "",
    condition: str = "",
    cache: ResponseCache | None = None,
    templates_dir: str | Path | None = None,
) -> CARJudgement:
    """Adoption is 1 iff the context meaning is reflected in the
    context-conditioned translation and absent from the no-context baseline."""
    if baseline_translation is None:
        raise JudgeError(f"{instance_id}: no no-context baseline translation available")
    template = load_template("car_presence_judge", templates_dir)
    in_translation, why_y = _presence(
        judge, context_text, translation, cache, template, tag="with_context"
    )
    in_baseline, why_base = _presence(
        judge, context_text, baseline_translation, cache, template, tag="baseline"
    )
    adopted = 1 if (in_translation and not in_baseline) else 0
    rationale = f"with_context={'YES' if in_translation else 'NO'} ({why_y}); " \
                f"baseline={'YES' if in_baseline else 'NO'} ({why_base})"
    return CARJudgement(
        instance_id=instance_id,
        condition=condition,
        adopted=adopted,
        judge_rationale=rationale,
    )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def round_display(value: float) -> float:
    """Half-up rounding to one decimal, for table display."""
    return float(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass
class AggregateRow:
    condition: str
    fidelity_by_pair: dict[str, float]
    aux_by_pair: dict[str, float] = field(default_factory=dict)

    @property
    def avg_fidelity_raw(self) -> float:
        values = list(self.fidelity_by_pair.values())
        return sum(values) / len(values)

    @property
    def avg_fidelity(self) -> float:
        return round_display(self.avg_fidelity_raw)

    @property
    def avg_aux_raw(self) -> float | None:
        if not self.aux_by_pair:
            return None
        values = list(self.aux_by_pair.values())
        return sum(values) / len(values)

    @property
    def avg_aux(self) -> float | None:
        raw = self.avg_aux_raw
        return None if raw is None else round_display(raw)

    def to_record(self) -> dict:
        return {
            "condition": self.condition,
            "fidelity_by_pair": dict(sorted(self.fidelity_by_pair.items())),
            "aux_by_pair": dict(sorted(self.aux_by_pair.items())),
            "avg_fidelity_raw": self.avg_fidelity_raw,
            "avg_fidelity": self.avg_fidelity,
            "avg_aux_raw": self.avg_aux_raw,
            "avg_aux": self.avg_aux,
        }


def aggregate(
    judgements: Sequence[FidelityJudgement],
    instance_pairs: Mapping[str, str],
    aux_scores: Mapping[str, Mapping[str, float]] | None = None,
) -> list[AggregateRow]:
    """Per-pair mean fidelity per condition, with rows emitted in canonical
    condition order. `aux_scores[condition][pair]` carries optional
    client-provided auxiliary scores (e.g. an external quality metric)."""
    if not judgements:
        raise JudgeError("no judgements to aggregate")
    aux_scores = aux_scores or {}
    cells: dict[str, dict[str, list[int]]] = {}
    for judgement in judgements:
        if judgement.score is None:
            continue
        pair = instance_pairs.get(judgement.instance_id)
        if pair is None:
            raise JudgeError(f"no language pair known for instance {judgement.instance_id}")
        cells.setdefault(judgement.condition, {}).setdefault(pair, []).append(judgement.score)

    rows = []
    ordered = [c.value for c in CONDITION_ORDER if c.value in cells]
    extras = [c for c in cells if c not in ordered]
    for condition in ordered + sorted(extras):
        by_pair = {
            pair: sum(scores) / len(scores)
            for pair, scores in sorted(cells[condition].items())
        }
        rows.append(
            AggregateRow(
                condition=condition,
                fidelity_by_pair=by_pair,
                aux_by_pair=dict(sorted(aux_scores.get(condition, {}).items())),
            )
        )
    return rows


def car_rates(judgements: Sequence[CARJudgement]) -> dict[str, float]:
    """Adoption rate (percent) per condition."""
    counts: dict[str, list[int]] = {}
    for judgement in judgements:
        counts.setdefault(judgement.condition, []).append(judgement.adopted)
    ordered = [c.value for c in CONDITION_ORDER if c.value in counts]
    extras = sorted(c for c in counts if c not in ordered)
    return {
        condition: 100.0 * sum(counts[condition]) / len(counts[condition])
        for condition in ordered + extras
    }


# ---------------------------------------------------------------------------
# Human correlation
# ---------------------------------------------------------------------------


def read_human_annotations(path: str | Path) -> dict[str, float]:
    """CSV columns (item_id, annotator_id, rating 0-3) -> per-item mean."""
    path = Path(path)
    if not path.is_file():
        raise JudgeError(f"cannot read human annotations from {path}")
    totals: dict[str, list[float]] = {}
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"item_id", "annotator_id", "rating"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise JudgeError(f"human annotation file must have columns {sorted(required)}")
        for row in reader:
            rating = float(row["rating"])
            if not 0 <= rating <= 3:
                raise JudgeError(f"rating {rating} outside [0, 3] for item {row['item_id']}")
            totals.setdefault(row["item_id"], []).append(rating)
    return {item: sum(vals) / len(vals) for item, vals in totals.items()}


def correlate_with_humans(
    auto: Mapping[str, float], human: Mapping[str, float]
) -> Correlations:
    """Correlate automatic per-item scores with mean human annotations over
    the shared, id-aligned items."""
    if set(auto) != set(human):
        missing = sorted(set(auto) ^ set(human))[:5]
        raise JudgeError(f"item id mismatch between auto and human scores (e.g. {missing})")
    ids = sorted(auto)
    return correlations([auto[i] for i in ids], [human[i] for i in ids])
