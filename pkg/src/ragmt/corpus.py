"""Idiom corpus ingestion: heterogeneous CSV/TSV/JSONL sources normalized
into one canonical instance schema, resource-tier tagging, and reproducible
per-pair sampling."""

from __future__ import annotations

import csv
import json
import logging
import random
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import DataError

logger = logging.getLogger(__name__)


class IngestError(DataError):
    pass


class Tier(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


# Resource tiers for the ten built-in translation directions, keyed by
# "<source>-<target>" ISO-639-1 codes.
BUILTIN_TIERS: dict[str, Tier] = {
    "fr-en": Tier.HIGH,
    "ja-en": Tier.HIGH,
    "ko-en": Tier.HIGH,
    "ru-en": Tier.HIGH,
    "de-en": Tier.HIGH,
    "en-de": Tier.HIGH,
    "fi-en": Tier.MEDIUM,
    "hi-en": Tier.LOW,
    "fa-en": Tier.LOW,
    "en-fa": Tier.LOW,
}


@dataclass(frozen=True)
class LanguagePair:
    source_lang: str
    target_lang: str
    tier: Tier

    def __post_init__(self):
        if self.source_lang == self.target_lang:
            raise IngestError(f"source and target language are both {self.source_lang!r}")

    @property
    def key(self) -> str:
        return f"{self.source_lang}-{self.target_lang}"


def tier_of(
    source_lang: str,
    target_lang: str,
    overrides: Mapping[str, Tier | str] | None = None,
) -> Tier:
    """Resource tier of a translation direction, from the built-in table or a
    user-supplied override map keyed like "hi-en"."""
    key = f"{source_lang.lower()}-{target_lang.lower()}"
    if overrides and key in overrides:
        return Tier(overrides[key])
    try:
        return BUILTIN_TIERS[key]
    except KeyError:
        raise IngestError(f"no resource tier known for language pair {key!r}") from None


@dataclass(frozen=True)
class IdiomInstance:
    """One source sentence with a marked idiom, its intended meaning, and a
    reference translation."""

    id: str
    pair: LanguagePair
    source_sentence: str
    idiom_surface: str
    gold_meaning: str
    reference_translation: str
    provenance: str = ""

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "source_lang": self.pair.source_lang,
            "target_lang": self.pair.target_lang,
            "tier": self.pair.tier.value,
            "source_sentence": self.source_sentence,
            "idiom_surface": self.idiom_surface,
            "gold_meaning": self.gold_meaning,
            "reference_translation": self.reference_translation,
            "provenance": self.provenance,
        }


@dataclass(frozen=True)
class Reject:
    line: int
    instance_id: str | None
    reason: str


@dataclass
class Dataset:
    instances: list[IdiomInstance]
    rejects: list[Reject] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[IdiomInstance]:
        return iter(self.instances)

    def pair_keys(self) -> list[str]:
        seen: dict[str, None] = {}
        for inst in self.instances:
            seen.setdefault(inst.pair.key)
        return list(seen)

    def of_pair(self, pair_key: str) -> list[IdiomInstance]:
        return [inst for inst in self.instances if inst.pair.key == pair_key]

    def by_id(self) -> dict[str, IdiomInstance]:
        return {inst.id: inst for inst in self.instances}


_REQUIRED_FIELDS = (
    "id",
    "source_lang",
    "target_lang",
    "source_sentence",
    "idiom_surface",
    "gold_meaning",
    "reference_translation",
)

SUPPORTED_FORMATS = ("jsonl", "csv", "tsv")


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def _rows_from_file(path: Path, source_format: str) -> Iterator[tuple[int, dict]]:
    if source_format == "jsonl":
        with path.open(encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield line_no, json.loads(line)
                except json.JSONDecodeError as exc:
                    yield line_no, {"_parse_error": str(exc)}
    else:
        delimiter = "," if source_format == "csv" else "\t"
        with path.open(encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle, delimiter=delimiter)
            for line_no, row in enumerate(reader, start=2):
                yield line_no, {k: v for k, v in row.items() if k is not None}


def _build_instance(
    row: dict, provenance: str, tier_overrides: Mapping[str, Tier | str] | None
) -> IdiomInstance:
    if "_parse_error" in row:
        raise IngestError(f"unparseable row: {row['_parse_error']}")
    for name in _REQUIRED_FIELDS:
        value = row.get(name)
        if value is None or not str(value).strip():
            raise IngestError(f"empty {name}")
    source_lang = str(row["source_lang"]).strip().lower()
    target_lang = str(row["target_lang"]).strip().lower()
    if source_lang == target_lang:
        raise IngestError(f"source and target language are both {source_lang!r}")
    if row.get("tier"):
        try:
            tier = Tier(str(row["tier"]).strip().lower())
        except ValueError:
            raise IngestError(f"unknown tier {row['tier']!r}") from None
    else:
        tier = tier_of(source_lang, target_lang, tier_overrides)
    sentence = _nfc(str(row["source_sentence"]).strip())
    surface = _nfc(str(row["idiom_surface"]).strip())
    if surface not in sentence:
        raise IngestError("idiom_surface not a substring of source_sentence")
    return IdiomInstance(
        id=str(row["id"]).strip(),
        pair=LanguagePair(source_lang, target_lang, tier),
        source_sentence=sentence,
        idiom_surface=surface,
        gold_meaning=_nfc(str(row["gold_meaning"]).strip()),
        reference_translation=_nfc(str(row["reference_translation"]).strip()),
        provenance=str(row.get("provenance") or provenance),
    )


def ingest(
    path: str | Path,
    source_format: str,
    *,
    tier_overrides: Mapping[str, Tier | str] | None = None,
) -> Dataset:
    """Read a source corpus into validated instances.

    Rows that violate the instance invariants land in the rejects report
    instead of being silently dropped; duplicate ids abort the ingest.
    """
    path = Path(path)
    if source_format not in SUPPORTED_FORMATS:
        raise IngestError(
            f"unknown source format {source_format!r}; expected one of {SUPPORTED_FORMATS}"
        )
    if not path.is_file():
        raise IngestError(f"cannot read {path}")

    instances: list[IdiomInstance] = []
    rejects: list[Reject] = []
    seen_ids: set[str] = set()
    for line_no, row in _rows_from_file(path, source_format):
        try:
            instance = _build_instance(row, provenance=path.name, tier_overrides=tier_overrides)
        except IngestError as exc:
            rejects.append(Reject(line=line_no, instance_id=row.get("id"), reason=str(exc)))
            continue
        if instance.id in seen_ids:
            raise IngestError(f"duplicate id {instance.id!r} at line {line_no}")
        seen_ids.add(instance.id)
        instances.append(instance)

    if not instances:
        raise IngestError(f"no valid rows in {path}")
    return Dataset(instances=instances, rejects=rejects)


def sample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Draw up to `n` instances per language pair with a seeded PRNG.

    The draw is keyed per pair so the selection for one pair is unaffected
    by the presence of others; identical inputs give identical output order.
    """
    if n < 1:
        raise IngestError(f"sample size must be >= 1, got {n}")
    if len(dataset) == 0:
        raise IngestError("cannot sample from an empty dataset")
    selected: list[IdiomInstance] = []
    notes: list[str] = []
    for pair_key in sorted(dataset.pair_keys()):
        pool = dataset.of_pair(pair_key)
        if n >= len(pool):
            if n > len(pool):
                message = f"{pair_key}: requested {n}, only {len(pool)} available"
                notes.append(message)
                logger.warning("sample saturated: %s", message)
            selected.extend(pool)
            continue
        rng = random.Random(f"{seed}:{pair_key}")
        selected.extend(rng.sample(pool, n))
    return Dataset(instances=selected, notes=notes)


def write_jsonl(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for inst in dataset.instances:
            handle.write(json.dumps(inst.to_record(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")


def write_rejects(rejects: Iterable[Reject], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for reject in rejects:
            record = {"line": reject.line, "id": reject.instance_id, "reason": reject.reason}
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            handle.write("\n")
