"""Uniform model access: a chat-completion HTTP client, a step-wise
token-distribution interface, a content-addressed response cache, and
deterministic mocks for offline runs."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .errors import ClientError, DataError
from .stats import shannon_entropy, validate_prob_vector

logger = logging.getLogger(__name__)

TRANSLATION_OPEN = "<translation>"
TRANSLATION_CLOSE = "</translation>"


@dataclass(frozen=True)
class DecodeParams:
    greedy: bool = True
    temperature: float = 0.0
    max_tokens: int = 512
    reasoning_mode: bool | None = None

    def key_dict(self) -> dict:
        # Greedy ignores temperature, so it must not influence the cache key.
        return {
            "greedy": self.greedy,
            "temperature": None if self.greedy else self.temperature,
            "max_tokens": self.max_tokens,
            "reasoning_mode": self.reasoning_mode,
        }


def cache_key(model_id: str, prompt: str, params: DecodeParams, extra: Mapping | None = None) -> str:
    payload = {
        "model_id": model_id,
        "prompt": prompt,
        "params": params.key_dict(),
        "extra": dict(extra) if extra else None,
    }
    blob = json.dumps(payload, ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def extract_translation(raw: str) -> tuple[str | None, str]:
    """Split a raw response into (delimited translation, everything else).

    Returns None for the translation when the delimiters are missing; the
    text outside the delimiters is treated as reasoning."""
    start = raw.find(TRANSLATION_OPEN)
    if start < 0:
        return None, raw.strip()
    end = raw.find(TRANSLATION_CLOSE, start + len(TRANSLATION_OPEN))
    if end < 0:
        return None, raw.strip()
    translation = raw[start + len(TRANSLATION_OPEN) : end].strip()
    reasoning = (raw[:start] + raw[end + len(TRANSLATION_CLOSE) :]).strip()
    return translation, reasoning


@dataclass
class TranslationRecord:
    instance_id: str
    condition: str
    model_id: str
    params: DecodeParams
    output_translation: str
    raw_response: str
    reasoning_text: str
    cache_key: str
    timestamp: str
    flags: list[str] = field(default_factory=list)
    cache_hit: bool = False  # runtime marker, not persisted

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "condition": self.condition,
            "model_id": self.model_id,
            "params": self.params.key_dict(),
            "output_translation": self.output_translation,
            "raw_response": self.raw_response,
            "reasoning_text": self.reasoning_text,
            "cache_key": self.cache_key,
            "timestamp": self.timestamp,
            "flags": self.flags,
        }

    @classmethod
    def from_record(cls, record: dict) -> "TranslationRecord":
        params = record.get("params", {})
        return cls(
            instance_id=record["instance_id"],
            condition=record["condition"],
            model_id=record["model_id"],
            params=DecodeParams(
                greedy=params.get("greedy", True),
                temperature=params.get("temperature") or 0.0,
                max_tokens=params.get("max_tokens", 512),
                reasoning_mode=params.get("reasoning_mode"),
            ),
            output_translation=record["output_translation"],
            raw_response=record["raw_response"],
            reasoning_text=record.get("reasoning_text", ""),
            cache_key=record["cache_key"],
            timestamp=record["timestamp"],
            flags=list(record.get("flags", [])),
        )


class ResponseCache:
    """Append-only JSONL cache with an in-memory index.

    Per-key locks give at-most-once producer execution under concurrency."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._index: dict[str, dict] = {}
        self._master = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        if self.path.is_file():
            with self.path.open(encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    self._index[entry["key"]] = entry["value"]

    def __len__(self) -> int:
        return len(self._index)

    def get(self, key: str) -> dict | None:
        with self._master:
            return self._index.get(key)

    def put(self, key: str, value: dict) -> None:
        line = json.dumps({"key": key, "value": value}, ensure_ascii=False, sort_keys=True)
        with self._master:
            self._index[key] = value
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")

    def _lock_for(self, key: str) -> threading.Lock:
        with self._master:
            return self._key_locks.setdefault(key, threading.Lock())

    def fetch(self, key: str, producer: Callable[[], dict]) -> tuple[dict, bool]:
        """Return (value, hit). The producer runs at most once per key."""
        cached = self.get(key)
        if cached is not None:
            return cached, True
        with self._lock_for(key):
            cached = self.get(key)
            if cached is not None:
                return cached, True
            value = producer()
            self.put(key, value)
            return value, False


class ChatClient(Protocol):
    model_id: str

    def complete(self, prompt: str, params: DecodeParams) -> str: ...


class HttpChatClient:
    """Client for the de-facto open chat-completions HTTP schema."""

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        *,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_retries: int = 4,
        backoff_base: float = 1.0,
        system_prompt: str | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model_id = model_id
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.system_prompt = system_prompt
        self._client = httpx.Client(timeout=timeout)

    def complete(self, prompt: str, params: DecodeParams) -> str:
        messages = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        messages.append({"role": "user", "content": prompt})
        body: dict = {
            "model": self.model_id,
            "messages": messages,
            "max_tokens": params.max_tokens,
            "temperature": 0.0 if params.greedy else params.temperature,
        }
        if params.reasoning_mode is not None:
            body["enable_thinking"] = params.reasoning_mode
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = self._client.post(
                    f"{self.endpoint}/chat/completions", json=body, headers=headers
                )
                if response.status_code >= 500:
                    raise ClientError(f"server error {response.status_code}")
                response.raise_for_status()
                data = response.json()
                content = data["choices"][0]["message"]["content"]
                if not isinstance(content, str):
                    raise ClientError("non-string content in chat response")
                return content
            except (httpx.HTTPError, ClientError, KeyError, IndexError) as exc:
                last_error = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(self.backoff_base * (2**attempt))
        raise ClientError(
            f"chat completion failed after {self.max_retries} attempts: {last_error}"
        )


def translate(
    task,
    params: DecodeParams,
    client: ChatClient,
    cache: ResponseCache | None = None,
) -> TranslationRecord:
    """Run one translation task through a chat client, consulting the cache
    first. Responses without the delimiter pair are kept raw and flagged."""
    key = cache_key(client.model_id, task.prompt, params)

    def produce() -> dict:
        raw = client.complete(task.prompt, params)
        translation, reasoning = extract_translation(raw)
        flags = []
        if translation is None:
            flags.append("unparsed")
            translation = ""
        return TranslationRecord(
            instance_id=task.instance_id,
            condition=task.condition.value,
            model_id=client.model_id,
            params=params,
            output_translation=translation,
            raw_response=raw,
            reasoning_text=reasoning,
            cache_key=key,
            timestamp=datetime.now(timezone.utc).isoformat(),
            flags=flags,
        ).to_record()

    if cache is None:
        record, hit = produce(), False
    else:
        record, hit = cache.fetch(key, produce)
    result = TranslationRecord.from_record(record)
    result.cache_hit = hit
    return result


# ---------------------------------------------------------------------------
# Token distributions and step-wise models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenDistribution:
    entries: dict[str, float]

    def __post_init__(self):
        if not self.entries:
            raise DataError("empty token distribution")
        validate_prob_vector(list(self.entries.values()))

    def probability(self, token: str) -> float:
        return self.entries.get(token, 0.0)

    def entropy(self) -> float:
        return shannon_entropy(list(self.entries.values()))

    def argmax(self) -> str:
        # Deterministic: highest probability, ties to the lexicographically
        # smallest token.
        best = max(self.entries.values())
        return min(t for t, p in self.entries.items() if p == best)


def truncate_top_k(dist: TokenDistribution, k: int) -> tuple[TokenDistribution, float]:
    """Keep the k most probable tokens, renormalize, and report the dropped
    tail mass."""
    if k < 1:
        raise DataError(f"top-k must be >= 1, got {k}")
    ranked = sorted(dist.entries.items(), key=lambda item: (-item[1], item[0]))
    kept = ranked[:k]
    tail = sum(p for _, p in ranked[k:])
    total = sum(p for _, p in kept)
    return TokenDistribution({t: p / total for t, p in kept}), tail


class StepwiseModel(Protocol):
    """A model that exposes its next-token distribution given a prompt and an
    already-emitted target prefix."""

    model_id: str
    end_token: str

    def next_distribution(self, prompt: str, prefix: Sequence[str]) -> TokenDistribution: ...


def next_token_distribution(
    model: StepwiseModel,
    prompt: str,
    prefix: Sequence[str],
    *,
    top_k: int | None = None,
) -> tuple[TokenDistribution, float]:
    """Query a step-wise model; optionally truncate to top-k (renormalized,
    with the dropped tail mass reported alongside)."""
    if not hasattr(model, "next_distribution"):
        raise ClientError(f"model {model!r} does not expose token distributions")
    dist = model.next_distribution(prompt, tuple(prefix))
    if top_k is None:
        return dist, 0.0
    return truncate_top_k(dist, top_k)


def greedy_decode(
    model: StepwiseModel, prompt: str, max_tokens: int
) -> list[str]:
    """Plain greedy decode against a step-wise model (no blending)."""
    emitted: list[str] = []
    for _ in range(max_tokens):
        dist = model.next_distribution(prompt, tuple(emitted))
        token = dist.argmax()
        emitted.append(token)
        if token == model.end_token:
            break
    return emitted


DEFAULT_TOYLM_FIXTURE = Path(__file__).parent / "data" / "toylm.json"


class ToyLM:
    """Deterministic fixture-backed step-wise model over a fixed 8-token
    vocabulary. The distribution at each step depends only on the step index
    and on whether the prompt contains the configured context marker."""

    def __init__(self, fixture_path: str | Path = DEFAULT_TOYLM_FIXTURE):
        data = json.loads(Path(fixture_path).read_text(encoding="utf-8"))
        self.model_id = "toylm"
        self.vocab: list[str] = data["vocab"]
        self.end_token: str = data["end_token"]
        self.context_marker: str = data["context_marker"]
        self.steps: list[dict] = data["steps"]
        self.fallback: dict[str, float] = data["fallback"]
        for step in self.steps:
            for variant in ("base", "context"):
                TokenDistribution(step[variant])  # validates on construction

    def next_distribution(self, prompt: str, prefix: Sequence[str]) -> TokenDistribution:
        variant = "context" if self.context_marker in prompt else "base"
        step = len(prefix)
        if step < len(self.steps):
            return TokenDistribution(dict(self.steps[step][variant]))
        return TokenDistribution(dict(self.fallback))


# ---------------------------------------------------------------------------
# Deterministic mocks for offline runs
# ---------------------------------------------------------------------------

_SENTENCE_RE = re.compile(r"^Sentence: (.*)$", re.MULTILINE)
_MEANING_RE = re.compile(r"means: (.*?)\n", re.DOTALL)
_IDIOM_RE = re.compile(r"the idiom '(.*?)' means:")


class MockTranslator:
    """Pure string-function translator: with a context block the output
    embeds the provided meaning; without one it embeds a literal rendering of
    whatever idiom the sentence carries. Enables adoption-rate truth-table
    tests with no network."""

    def __init__(self, model_id: str = "mock-translator"):
        self.model_id = model_id

    @staticmethod
    def template(source_sentence: str) -> str:
        return f"rendering of [{source_sentence}]"

    @staticmethod
    def literal(idiom: str) -> str:
        return f"literally-{idiom.replace(' ', '-')}"

    def complete(self, prompt: str, params: DecodeParams) -> str:
        sentence_match = _SENTENCE_RE.search(prompt)
        sentence = sentence_match.group(1).strip() if sentence_match else ""
        meaning_match = _MEANING_RE.search(prompt)
        if meaning_match:
            filler = meaning_match.group(1).strip()
        else:
            idiom_match = _IDIOM_RE.search(prompt)
            # Without a context block the idiom is unmarked in the prompt;
            # fall back to the sentence's final two words as its "idiom".
            idiom = (
                idiom_match.group(1)
                if idiom_match
                else " ".join(sentence.split()[-2:])
            )
            filler = self.literal(idiom)
        body = f"{self.template(sentence)} with {filler}"
        return f"{TRANSLATION_OPEN}{body}{TRANSLATION_CLOSE}"


class MockNoiseGenerator:
    """Deterministic noise generator that understands the stock synthesis
    templates (it keys off their instruction wording)."""

    def __init__(self, model_id: str = "mock-noise"):
        self.model_id = model_id

    def generate(self, prompt: str) -> str:
        idiom = ""
        gold = ""
        for line in prompt.splitlines():
            if line.startswith("Idiom: "):
                idiom = line[len("Idiom: ") :].strip()
            elif line.startswith("Correct meaning: "):
                gold = line[len("Correct meaning: ") :].strip()
        if "Reorder the words" in prompt:
            return " ".join(reversed(gold.split()))
        if "word-by-word translation" in prompt and "distortion" not in prompt:
            return f"word-for-word rendering of {idiom}"
        if "distortion" in prompt:
            return f"approximate rendering of {idiom}"
        if "contradicts" in prompt:
            return f"the opposite of {gold}"
        raise ClientError(f"mock generator cannot interpret prompt: {prompt[:80]!r}")


class StubJudge:
    """Offline judge: answers presence questions by substring containment and
    rating questions by whether the stated meaning appears in the translation.
    Deterministic per prompt."""

    def __init__(self, model_id: str = "stub-judge"):
        self.model_id = model_id
        self.calls = 0

    @staticmethod
    def _field(prompt: str, label: str) -> str:
        for line in prompt.splitlines():
            if line.startswith(label):
                return line[len(label) :].strip()
        return ""

    def complete(self, prompt: str, params: DecodeParams) -> str:
        self.calls += 1
        if "Answer YES or NO" in prompt:
            meaning = self._field(prompt, "Meaning: ")
            translation = self._field(prompt, "Translation: ")
            present = meaning.casefold() in translation.casefold() if meaning else False
            return "YES" if present else "NO"
        meaning = self._field(prompt, "Intended meaning of the idiom: ")
        translation = self._field(prompt, "Translation to rate: ")
        return "3" if meaning and meaning.casefold() in translation.casefold() else "0"
