"""Controlled noise synthesis: four corrupted meanings per idiom instance via
a generator client, plus validation of the synthesized sets with TER,
embedding similarity, and contradiction-rate statistics."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Protocol

from . import stats
from .corpus import Dataset, IdiomInstance
from .errors import ClientError, DataError
from .templates import language_name, load_template, render

logger = logging.getLogger(__name__)

DEFAULT_RETRY_CAP = 3


class NoiseError(DataError):
    pass


class NoiseKind(str, Enum):
    STRUCT = "struct"
    LITERAL = "literal"
    SEMANTIC = "semantic"
    OPPOSITE = "opposite"


@dataclass
class NoiseSet:
    """The four synthesized noisy meanings attached to one instance."""

    instance_id: str
    meanings: dict[NoiseKind, str]
    generator_id: str = ""
    prompt_hash: str = ""

    def __post_init__(self):
        missing = [kind.value for kind in NoiseKind if kind not in self.meanings]
        if missing:
            raise NoiseError(f"{self.instance_id}: missing noise kinds {missing}")

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "meanings": {kind.value: text for kind, text in self.meanings.items()},
            "generator_id": self.generator_id,
            "prompt_hash": self.prompt_hash,
        }

    @classmethod
    def from_record(cls, record: dict) -> "NoiseSet":
        return cls(
            instance_id=record["instance_id"],
            meanings={NoiseKind(k): v for k, v in record["meanings"].items()},
            generator_id=record.get("generator_id", ""),
            prompt_hash=record.get("prompt_hash", ""),
        )


class TextGenerator(Protocol):
    """Minimal text-generation client surface used for noise synthesis."""

    model_id: str

    def generate(self, prompt: str) -> str: ...


class SimilarityClient(Protocol):
    def similarity(self, first: str, second: str) -> float: ...


class EntailmentClient(Protocol):
    def classify(self, premise: str, hypothesis: str) -> str:
        """Return one of "entailment", "neutral", "contradiction"."""
        ...


def noise_prompt(
    instance: IdiomInstance,
    kind: NoiseKind,
    *,
    templates_dir: str | Path | None = None,
    meaning_language: str | None = None,
) -> str:
    """Render the kind-specific synthesis prompt for one instance.

    Unless overridden, meanings are generated in the pair's target language.
    """
    template = load_template(f"noise_{kind.value}", templates_dir)
    language = meaning_language or language_name(instance.pair.target_lang)
    return render(
        template,
        {
            "idiom": instance.idiom_surface,
            "gold_meaning": instance.gold_meaning,
            "source_language": language_name(instance.pair.source_lang),
            "meaning_language": language,
        },
    )


def synthesize_noise(
    instance: IdiomInstance,
    kind: NoiseKind,
    generator: TextGenerator,
    *,
    templates_dir: str | Path | None = None,
    meaning_language: str | None = None,
    retry_cap: int = DEFAULT_RETRY_CAP,
) -> str:
    """Generate one noisy meaning, regenerating (up to the retry cap) when the
    candidate is empty or case-folds equal to the gold meaning."""
    if not instance.gold_meaning:
        raise NoiseError(f"{instance.id}: no gold meaning to perturb")
    prompt = noise_prompt(
        instance, kind, templates_dir=templates_dir, meaning_language=meaning_language
    )
    last = ""
    for _ in range(retry_cap):
        try:
            candidate = generator.generate(prompt).strip()
        except ClientError:
            raise
        except Exception as exc:
            raise ClientError(f"noise generator failed for {instance.id}: {exc}") from exc
        last = candidate
        if candidate and candidate.casefold() != instance.gold_meaning.casefold():
            return candidate
    if last and last.casefold() == instance.gold_meaning.casefold():
        raise NoiseError(
            f"degenerate noise: generator kept returning the gold meaning "
            f"for {instance.id}/{kind.value}"
        )
    raise ClientError(f"empty generation for {instance.id}/{kind.value} after {retry_cap} tries")


def synthesize_set(
    instance: IdiomInstance,
    generator: TextGenerator,
    *,
    templates_dir: str | Path | None = None,
    meaning_language: str | None = None,
    retry_cap: int = DEFAULT_RETRY_CAP,
) -> NoiseSet:
    meanings: dict[NoiseKind, str] = {}
    prompts: list[str] = []
    for kind in NoiseKind:
        prompts.append(
            noise_prompt(instance, kind, templates_dir=templates_dir, meaning_language=meaning_language)
        )
        meanings[kind] = synthesize_noise(
            instance,
            kind,
            generator,
            templates_dir=templates_dir,
            meaning_language=meaning_language,
            retry_cap=retry_cap,
        )
    digest = hashlib.sha256("\x1e".join(prompts).encode("utf-8")).hexdigest()
    return NoiseSet(
        instance_id=instance.id,
        meanings=meanings,
        generator_id=getattr(generator, "model_id", ""),
        prompt_hash=digest,
    )


def _clamp_similarity(value: float, flags: list[str], label: str) -> float:
    if -1.0 <= value <= 1.0:
        return value
    flags.append(f"{label}: client similarity {value} outside [-1, 1], clamped")
    return max(-1.0, min(1.0, value))


@dataclass
class NoiseStats:
    ter_struct: float
    sim_g_struct: float
    sim_g_literal: float
    sim_literal_semantic: float
    sim_g_semantic: float
    cr_opposite: float
    count: int

    def to_dict(self) -> dict:
        return {
            "ter_struct": self.ter_struct,
            "sim_g_struct": self.sim_g_struct,
            "sim_g_literal": self.sim_g_literal,
            "sim_literal_semantic": self.sim_literal_semantic,
            "sim_g_semantic": self.sim_g_semantic,
            "cr_opposite": self.cr_opposite,
            "count": self.count,
        }


@dataclass
class NoiseValidationReport:
    overall: NoiseStats
    per_pair: dict[str, NoiseStats]
    clamped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "per_pair": {k: v.to_dict() for k, v in sorted(self.per_pair.items())},
            "clamped": self.clamped,
        }


def _aggregate(cells: list[dict]) -> NoiseStats:
    count = len(cells)
    mean = lambda key: sum(c[key] for c in cells) / count  # noqa: E731
    return NoiseStats(
        ter_struct=mean("ter"),
        sim_g_struct=mean("sim_g_struct"),
        sim_g_literal=mean("sim_g_literal"),
        sim_literal_semantic=mean("sim_literal_semantic"),
        sim_g_semantic=mean("sim_g_semantic"),
        cr_opposite=mean("contradiction"),
        count=count,
    )


def validate_noise(
    dataset: Dataset,
    noise_sets: Mapping[str, NoiseSet],
    sim_client: SimilarityClient,
    nli_client: EntailmentClient,
) -> NoiseValidationReport:
    """Check that synthesized noise behaves as designed: TER between the gold
    meaning and its structural variant, cosine similarities across the noise
    spectrum, and the fraction of opposite meanings the entailment client
    labels as contradictions."""
    if len(dataset) == 0:
        raise NoiseError("empty dataset")
    flags: list[str] = []
    cells: list[tuple[str, dict]] = []
    for instance in dataset:
        noise = noise_sets.get(instance.id)
        if noise is None:
            raise NoiseError(f"missing noise set for instance {instance.id}")
        gold = instance.gold_meaning
        struct = noise.meanings[NoiseKind.STRUCT]
        literal = noise.meanings[NoiseKind.LITERAL]
        semantic = noise.meanings[NoiseKind.SEMANTIC]
        opposite = noise.meanings[NoiseKind.OPPOSITE]
        try:
            cell = {
                "ter": stats.ter_text(gold, struct),
                "sim_g_struct": _clamp_similarity(
                    sim_client.similarity(gold, struct), flags, instance.id
                ),
                "sim_g_literal": _clamp_similarity(
                    sim_client.similarity(gold, literal), flags, instance.id
                ),
                "sim_literal_semantic": _clamp_similarity(
                    sim_client.similarity(literal, semantic), flags, instance.id
                ),
                "sim_g_semantic": _clamp_similarity(
                    sim_client.similarity(gold, semantic), flags, instance.id
                ),
                "contradiction": 1.0
                if nli_client.classify(gold, opposite) == "contradiction"
                else 0.0,
            }
        except ClientError:
            raise
        except Exception as exc:
            raise ClientError(f"validation client failed on {instance.id}: {exc}") from exc
        cells.append((instance.pair.key, cell))

    per_pair: dict[str, NoiseStats] = {}
    for pair_key in sorted({pair for pair, _ in cells}):
        per_pair[pair_key] = _aggregate([cell for pair, cell in cells if pair == pair_key])
    return NoiseValidationReport(
        overall=_aggregate([cell for _, cell in cells]),
        per_pair=per_pair,
        clamped=flags,
    )


class FixedSimilarityClient:
    """Offline similarity stub returning one constant score."""

    def __init__(self, value: float = 0.8):
        self.value = value

    def similarity(self, first: str, second: str) -> float:
        return self.value


class FixedEntailmentClient:
    """Offline entailment stub returning one constant label."""

    def __init__(self, label: str = "contradiction"):
        self.label = label

    def classify(self, premise: str, hypothesis: str) -> str:
        return self.label


class HttpSimilarityClient:
    """POSTs {"first", "second"} and expects {"similarity": <float>}."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        import httpx

        self.endpoint = endpoint
        self._client = httpx.Client(timeout=timeout)

    def similarity(self, first: str, second: str) -> float:
        try:
            response = self._client.post(
                self.endpoint, json={"first": first, "second": second}
            )
            response.raise_for_status()
            return float(response.json()["similarity"])
        except Exception as exc:
            raise ClientError(f"similarity client failed: {exc}") from exc


class HttpEntailmentClient:
    """POSTs {"premise", "hypothesis"} and expects {"label": <str>}."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        import httpx

        self.endpoint = endpoint
        self._client = httpx.Client(timeout=timeout)

    def classify(self, premise: str, hypothesis: str) -> str:
        try:
            response = self._client.post(
                self.endpoint, json={"premise": premise, "hypothesis": hypothesis}
            )
            response.raise_for_status()
            return str(response.json()["label"])
        except Exception as exc:
            raise ClientError(f"entailment client failed: {exc}") from exc


def write_noise_sets(noise_sets: Mapping[str, NoiseSet], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for instance_id in sorted(noise_sets):
            handle.write(
                json.dumps(noise_sets[instance_id].to_record(), ensure_ascii=False, sort_keys=True)
            )
            handle.write("\n")


def read_noise_sets(path: str | Path) -> dict[str, NoiseSet]:
    path = Path(path)
    if not path.is_file():
        raise NoiseError(f"cannot read noise sets from {path}")
    noise_sets: dict[str, NoiseSet] = {}
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            noise = NoiseSet.from_record(json.loads(line))
            noise_sets[noise.instance_id] = noise
    return noise_sets
