"""Experiment orchestration from a single JSON config: resumable stages,
persisted artifacts, deterministic reruns, and a run ledger."""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .conditions import (
    CONDITION_ORDER,
    ContextCondition,
    TranslationTask,
    expand_matrix,
    read_tasks,
    write_tasks,
)
from .corpus import Dataset, ingest, sample, write_jsonl, write_rejects
from .errors import ConfigError, DataError
from .gateway import (
    ChatClient,
    DecodeParams,
    HttpChatClient,
    MockNoiseGenerator,
    MockTranslator,
    ResponseCache,
    StubJudge,
    TranslationRecord,
    translate,
)
from .judging import (
    FIDELITY_RUNS,
    CARJudgement,
    FidelityJudgement,
    aggregate,
    car_rates,
    judge_car,
    judge_fidelity,
)
from .noise import NoiseSet, read_noise_sets, synthesize_set, write_noise_sets

logger = logging.getLogger(__name__)

ALL_CONDITIONS = [c.value for c in CONDITION_ORDER]


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def dump_json(payload: Any) -> str:
    return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def dump_jsonl(records: list[dict]) -> str:
    return "".join(
        json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n" for record in records
    )


@dataclass
class ClientConfig:
    kind: str
    endpoint: str = ""
    model_id: str = ""
    api_key_env: str = ""
    max_tokens: int = 4096
    reasoning_mode: bool | None = None

    @classmethod
    def from_dict(cls, raw: dict, role: str) -> "ClientConfig":
        kind = raw.get("kind")
        if kind not in ("mock", "stub", "http"):
            raise ConfigError(f"{role}: unknown client kind {kind!r}")
        cfg = cls(
            kind=kind,
            endpoint=raw.get("endpoint", ""),
            model_id=raw.get("model_id", ""),
            api_key_env=raw.get("api_key_env", ""),
            max_tokens=raw.get("max_tokens", 4096),
            reasoning_mode=raw.get("reasoning_mode"),
        )
        if kind == "http" and (not cfg.endpoint or not cfg.model_id):
            raise ConfigError(f"{role}: http client needs 'endpoint' and 'model_id'")
        return cfg


def build_chat_client(cfg: ClientConfig, role: str) -> ChatClient:
    if cfg.kind == "mock":
        return MockTranslator()
    if cfg.kind == "stub":
        return StubJudge()
    api_key = os.environ.get(cfg.api_key_env) if cfg.api_key_env else None
    return HttpChatClient(cfg.endpoint, cfg.model_id, api_key=api_key)


def build_generator(cfg: ClientConfig):
    if cfg.kind == "mock":
        return MockNoiseGenerator()
    client = build_chat_client(cfg, "generator")

    class _GeneratorAdapter:
        model_id = client.model_id

        def generate(self, prompt: str) -> str:
            return client.complete(
                prompt, DecodeParams(greedy=False, temperature=0.7, max_tokens=256)
            )

    return _GeneratorAdapter()


@dataclass
class RunConfig:
    dataset_path: Path
    dataset_format: str
    output_dir: Path
    cache_dir: Path
    sample_size: int = 200
    seed: int = 0
    conditions: list[ContextCondition] = field(
        default_factory=lambda: list(CONDITION_ORDER)
    )
    translator: ClientConfig = field(default_factory=lambda: ClientConfig(kind="mock"))
    generator: ClientConfig | None = field(default_factory=lambda: ClientConfig(kind="mock"))
    judge: ClientConfig | None = field(default_factory=lambda: ClientConfig(kind="stub"))
    judge_runs: int = FIDELITY_RUNS
    max_workers: int = 4
    noise_path: Path | None = None
    tier_overrides: dict[str, str] | None = None
    templates_dir: Path | None = None

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "RunConfig":
        base = base_dir or Path.cwd()

        def resolve(value: str) -> Path:
            path = Path(value)
            return path if path.is_absolute() else base / path

        dataset = raw.get("dataset")
        if not isinstance(dataset, dict) or "path" not in dataset:
            raise ConfigError("config needs dataset.path")
        dataset_path = resolve(dataset["path"])
        if not dataset_path.is_file():
            raise ConfigError(f"dataset path does not exist: {dataset_path}")

        conditions = []
        for name in raw.get("conditions", ALL_CONDITIONS):
            try:
                conditions.append(ContextCondition(name))
            except ValueError:
                raise ConfigError(f"unknown condition {name!r}") from None
        if ContextCondition.NONE not in conditions:
            # the no-context baseline anchors adoption judging
            conditions.insert(0, ContextCondition.NONE)

        sample_cfg = raw.get("sample", {})
        translator = ClientConfig.from_dict(raw.get("translator", {"kind": "mock"}), "translator")
        generator_raw = raw.get("generator")
        judge_raw = raw.get("judge")
        noise_path = resolve(raw["noise_path"]) if raw.get("noise_path") else None
        if noise_path is not None and not noise_path.is_file():
            raise ConfigError(f"noise path does not exist: {noise_path}")
        needs_synth = noise_path is None and any(
            c not in (ContextCondition.NONE, ContextCondition.GOLD) for c in conditions
        )
        if needs_synth and generator_raw is None:
            raise ConfigError("noise conditions requested but no generator configured")
        templates_dir = resolve(raw["templates_dir"]) if raw.get("templates_dir") else None
        if templates_dir is not None and not templates_dir.is_dir():
            raise ConfigError(f"templates dir does not exist: {templates_dir}")

        return cls(
            dataset_path=dataset_path,
            dataset_format=dataset.get("format", "jsonl"),
            output_dir=resolve(raw.get("output_dir", "results")),
            cache_dir=resolve(raw.get("cache_dir", "cache")),
            sample_size=int(sample_cfg.get("n", 200)),
            seed=int(sample_cfg.get("seed", 0)),
            conditions=conditions,
            translator=translator,
            generator=ClientConfig.from_dict(generator_raw, "generator")
            if generator_raw
            else None,
            judge=ClientConfig.from_dict(judge_raw, "judge") if judge_raw else None,
            judge_runs=int(raw.get("judge_runs", FIDELITY_RUNS)),
            max_workers=int(raw.get("max_workers", 4)),
            noise_path=noise_path,
            tier_overrides=raw.get("tier_overrides"),
            templates_dir=templates_dir,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(raw, base_dir=path.parent)


class Run:
    """One pipeline execution; every stage persists its artifact and is
    skipped when that artifact already exists (resume semantics)."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = config.output_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = ResponseCache(config.cache_dir / "responses.jsonl")
        self.ledger: dict[str, Any] = {
            "version": __version__,
            "seed": config.seed,
            "sample_size": config.sample_size,
            "conditions": [c.value for c in config.conditions],
            "translator": config.translator.kind,
            "judge": config.judge.kind if config.judge else None,
            "stages": {},
        }

    def artifact(self, name: str) -> Path:
        return self.out / name

    def _stage(self, name: str, outputs: list[str], compute: Callable[[], dict]) -> None:
        paths = [self.artifact(o) for o in outputs]
        if all(p.exists() for p in paths):
            self.ledger["stages"][name] = {"status": "skipped"}
            logger.info("stage %s: artifacts present, skipped", name)
            return
        stats = compute()
        self.ledger["stages"][name] = {"status": "computed", **stats}
        logger.info("stage %s: computed %s", name, stats)

    # -- stages ------------------------------------------------------------

    def stage_ingest(self) -> None:
        def compute() -> dict:
            dataset = ingest(
                self.config.dataset_path,
                self.config.dataset_format,
                tier_overrides=self.config.tier_overrides,
            )
            write_jsonl(dataset, self.artifact("dataset.jsonl"))
            write_rejects(dataset.rejects, self.artifact("rejects.jsonl"))
            return {"instances": len(dataset), "rejects": len(dataset.rejects)}

        self._stage("ingest", ["dataset.jsonl", "rejects.jsonl"], compute)

    def stage_sample(self) -> None:
        def compute() -> dict:
            dataset = ingest(self.artifact("dataset.jsonl"), "jsonl")
            drawn = sample(dataset, self.config.sample_size, self.config.seed)
            write_jsonl(drawn, self.artifact("sample.jsonl"))
            return {"instances": len(drawn), "notes": drawn.notes}

        self._stage("sample", ["sample.jsonl"], compute)

    def _load_sample(self) -> Dataset:
        return ingest(self.artifact("sample.jsonl"), "jsonl")

    def stage_synth(self) -> None:
        noise_conditions = [
            c for c in self.config.conditions
            if c not in (ContextCondition.NONE, ContextCondition.GOLD)
        ]
        if not noise_conditions:
            self.ledger["stages"]["synth"] = {"status": "not-needed"}
            return
        if self.config.noise_path is not None:
            noise_sets = read_noise_sets(self.config.noise_path)
            write_noise_sets(noise_sets, self.artifact("noise.jsonl"))
            self.ledger["stages"]["synth"] = {
                "status": "imported",
                "noise_sets": len(noise_sets),
            }
            return

        def compute() -> dict:
            generator = build_generator(self.config.generator)
            dataset = self._load_sample()
            noise_sets: dict[str, NoiseSet] = {}
            with concurrent.futures.ThreadPoolExecutor(self.config.max_workers) as pool:
                results = pool.map(
                    lambda inst: synthesize_set(
                        inst, generator, templates_dir=self.config.templates_dir
                    ),
                    dataset.instances,
                )
                for noise in results:
                    noise_sets[noise.instance_id] = noise
            write_noise_sets(noise_sets, self.artifact("noise.jsonl"))
            return {"noise_sets": len(noise_sets)}

        self._stage("synth", ["noise.jsonl"], compute)

    def stage_expand(self) -> None:
        def compute() -> dict:
            dataset = self._load_sample()
            noise_path = self.artifact("noise.jsonl")
            noise_sets = read_noise_sets(noise_path) if noise_path.exists() else {}
            tasks = expand_matrix(
                dataset,
                self.config.conditions,
                noise_sets,
                templates_dir=self.config.templates_dir,
            )
            write_tasks(tasks, self.artifact("tasks.jsonl"))
            return {"tasks": len(tasks)}

        self._stage("expand", ["tasks.jsonl"], compute)

    def stage_translate(self) -> None:
        def compute() -> dict:
            tasks = read_tasks(self.artifact("tasks.jsonl"))
            client = build_chat_client(self.config.translator, "translator")
            params = DecodeParams(
                greedy=True,
                max_tokens=self.config.translator.max_tokens,
                reasoning_mode=self.config.translator.reasoning_mode,
            )
            # No-context tasks go first: they anchor the adoption baseline.
            ordered = [t for t in tasks if t.condition is ContextCondition.NONE] + [
                t for t in tasks if t.condition is not ContextCondition.NONE
            ]

            def run_one(task: TranslationTask) -> TranslationRecord:
                return translate(task, params, client, self.cache)

            with concurrent.futures.ThreadPoolExecutor(self.config.max_workers) as pool:
                records = list(pool.map(run_one, ordered))
            hits = sum(1 for r in records if r.cache_hit)
            write_atomic(
                self.artifact("translations.jsonl"),
                dump_jsonl([r.to_record() for r in records]),
            )
            return {"translations": len(records), "cache_hits": hits}

        self._stage("translate", ["translations.jsonl"], compute)

    def _load_translations(self) -> list[TranslationRecord]:
        path = self.artifact("translations.jsonl")
        if not path.is_file():
            raise DataError(f"missing artifact {path}; run the translate stage first")
        records = []
        with path.open(encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    records.append(TranslationRecord.from_record(json.loads(line)))
        return records

    def stage_judge(self) -> None:
        if self.config.judge is None:
            self.ledger["stages"]["judge"] = {"status": "not-configured"}
            return

        def compute() -> dict:
            records = self._load_translations()
            dataset = self._load_sample()
            meanings = {inst.id: inst.gold_meaning for inst in dataset.by_id().values()}
            judge = build_chat_client(self.config.judge, "judge")

            def run_one(record: TranslationRecord) -> FidelityJudgement:
                return judge_fidelity(
                    record.output_translation,
                    meanings[record.instance_id],
                    judge,
                    runs=self.config.judge_runs,
                    instance_id=record.instance_id,
                    condition=record.condition,
                    cache=self.cache,
                    templates_dir=self.config.templates_dir,
                )

            with concurrent.futures.ThreadPoolExecutor(self.config.max_workers) as pool:
                judgements = list(pool.map(run_one, records))
            write_atomic(
                self.artifact("fidelity.jsonl"),
                dump_jsonl([j.to_record() for j in judgements]),
            )
            return {
                "judgements": len(judgements),
                "invalid": sum(1 for j in judgements if not j.valid),
            }

        self._stage("judge", ["fidelity.jsonl"], compute)

    def stage_car(self) -> None:
        if self.config.judge is None:
            self.ledger["stages"]["car"] = {"status": "not-configured"}
            return

        def compute() -> dict:
            records = self._load_translations()
            tasks = {(t.instance_id, t.condition.value): t for t in read_tasks(self.artifact("tasks.jsonl"))}
            baselines = {
                r.instance_id: r.output_translation
                for r in records
                if r.condition == ContextCondition.NONE.value
            }
            judge = build_chat_client(self.config.judge, "judge")
            contextual = [r for r in records if r.condition != ContextCondition.NONE.value]

            def run_one(record: TranslationRecord) -> CARJudgement:
                task = tasks[(record.instance_id, record.condition)]
                return judge_car(
                    record.output_translation,
                    baselines.get(record.instance_id),
                    task.context_text or "",
                    judge,
                    instance_id=record.instance_id,
                    condition=record.condition,
                    cache=self.cache,
                    templates_dir=self.config.templates_dir,
                )

            with concurrent.futures.ThreadPoolExecutor(self.config.max_workers) as pool:
                judgements = list(pool.map(run_one, contextual))
            write_atomic(
                self.artifact("car.jsonl"),
                dump_jsonl([j.to_record() for j in judgements]),
            )
            return {"judgements": len(judgements)}

        self._stage("car", ["car.jsonl"], compute)

    def stage_aggregate(self) -> None:
        if self.config.judge is None:
            self.ledger["stages"]["aggregate"] = {"status": "not-configured"}
            return

        def compute() -> dict:
            dataset = self._load_sample()
            instance_pairs = {inst.id: inst.pair.key for inst in dataset}
            fidelity_path = self.artifact("fidelity.jsonl")
            if not fidelity_path.is_file():
                raise DataError(f"missing artifact {fidelity_path}")
            judgements = [
                FidelityJudgement.from_record(json.loads(line))
                for line in fidelity_path.read_text(encoding="utf-8").splitlines()
                if line.strip()
            ]
            rows = aggregate(judgements, instance_pairs)
            write_atomic(
                self.artifact("aggregate.json"),
                dump_json([row.to_record() for row in rows]),
            )
            car_path = self.artifact("car.jsonl")
            rates: dict[str, float] = {}
            if car_path.is_file():
                car_judgements = [
                    CARJudgement.from_record(json.loads(line))
                    for line in car_path.read_text(encoding="utf-8").splitlines()
                    if line.strip()
                ]
                if car_judgements:
                    rates = car_rates(car_judgements)
            write_atomic(self.artifact("car_rates.json"), dump_json(rates))
            return {"rows": len(rows)}

        self._stage("aggregate", ["aggregate.json", "car_rates.json"], compute)

    def finalize(self) -> None:
        artifacts = {}
        for path in sorted(self.out.iterdir()):
            if path.is_file() and path.name != "run_ledger.json":
                digest = hashlib.sha256(path.read_bytes()).hexdigest()
                artifacts[path.name] = digest
        self.ledger["artifacts"] = artifacts
        write_atomic(self.artifact("run_ledger.json"), dump_json(self.ledger))

    def execute(self) -> Path:
        self.stage_ingest()
        self.stage_sample()
        self.stage_synth()
        self.stage_expand()
        self.stage_translate()
        self.stage_judge()
        self.stage_car()
        self.stage_aggregate()
        self.finalize()
        return self.out


def run(config: RunConfig) -> Path:
    """Execute the full pipeline; returns the results directory."""
    return Run(config).execute()
