"""Command-line interface: each pipeline stage independently invocable, plus
full-run orchestration and report emission.

Exit codes: 0 ok, 2 config error, 3 upstream-client error, 4 validation
failure."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .ckplug import BlendConfig, decode_with_ckplug, write_step_logs
from .conditions import ContextCondition, read_tasks
from .corpus import ingest, sample, write_jsonl, write_rejects
from .errors import ClientError, ConfigError, DataError
from .gateway import DecodeParams, ToyLM, DEFAULT_TOYLM_FIXTURE
from .judging import correlate_with_humans, read_human_annotations
from .mixes import MixStrategy, build_mix, emit_manifest
from .noise import (
    FixedEntailmentClient,
    FixedSimilarityClient,
    HttpEntailmentClient,
    HttpSimilarityClient,
    read_noise_sets,
    synthesize_set,
    validate_noise,
    write_noise_sets,
)
from .pipeline import ClientConfig, Run, RunConfig, build_generator, dump_json, dump_jsonl, write_atomic
from .report import REPORT_KINDS, analyze_traces, report

logger = logging.getLogger(__name__)


def _client_config(args, role: str) -> ClientConfig:
    raw = {"kind": getattr(args, f"{role}_kind")}
    endpoint = getattr(args, f"{role}_endpoint", None)
    model = getattr(args, f"{role}_model", None)
    if endpoint:
        raw.update({"kind": "http", "endpoint": endpoint, "model_id": model or ""})
    if getattr(args, "api_key_env", None):
        raw["api_key_env"] = args.api_key_env
    return ClientConfig.from_dict(raw, role)


def cmd_ingest(args) -> int:
    overrides = json.loads(Path(args.tier_overrides).read_text()) if args.tier_overrides else None
    dataset = ingest(args.input, args.format, tier_overrides=overrides)
    write_jsonl(dataset, args.out)
    if args.rejects:
        write_rejects(dataset.rejects, args.rejects)
    print(f"ingested {len(dataset)} instances, {len(dataset.rejects)} rejects -> {args.out}")
    return 0


def cmd_sample(args) -> int:
    dataset = ingest(args.input, "jsonl")
    drawn = sample(dataset, args.n, args.seed)
    write_jsonl(drawn, args.out)
    for note in drawn.notes:
        print(f"warning: {note}", file=sys.stderr)
    print(f"sampled {len(drawn)} instances -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    dataset = ingest(args.input, "jsonl")
    generator = build_generator(_client_config(args, "generator"))
    noise_sets = {}
    for instance in dataset:
        noise_sets[instance.id] = synthesize_set(
            instance,
            generator,
            templates_dir=args.templates_dir,
            meaning_language=args.meaning_language,
        )
    write_noise_sets(noise_sets, args.out)
    print(f"synthesized noise for {len(noise_sets)} instances -> {args.out}")
    return 0


def cmd_validate_noise(args) -> int:
    dataset = ingest(args.input, "jsonl")
    noise_sets = read_noise_sets(args.noise)
    sim = (
        HttpSimilarityClient(args.sim_endpoint)
        if args.sim_endpoint
        else FixedSimilarityClient(args.stub_similarity)
    )
    nli = (
        HttpEntailmentClient(args.nli_endpoint)
        if args.nli_endpoint
        else FixedEntailmentClient(args.stub_label)
    )
    result = validate_noise(dataset, noise_sets, sim, nli)
    write_atomic(Path(args.out), dump_json(result.to_dict()))
    overall = result.overall
    print(
        f"TER(G,struct)={overall.ter_struct:.1f}  "
        f"Sim(G,struct)={overall.sim_g_struct:.2f}  "
        f"Sim(G,literal)={overall.sim_g_literal:.2f}  "
        f"Sim(literal,semantic)={overall.sim_literal_semantic:.2f}  "
        f"Sim(G,semantic)={overall.sim_g_semantic:.2f}  "
        f"CR={overall.cr_opposite:.2f}"
    )
    for pair, stats in result.per_pair.items():
        print(
            f"  {pair}: TER={stats.ter_struct:.1f} simG/struct={stats.sim_g_struct:.2f} "
            f"CR={stats.cr_opposite:.2f} (n={stats.count})"
        )
    print(f"report -> {args.out}")
    return 0


def cmd_run(args) -> int:
    config = RunConfig.from_file(args.config)
    results = Run(config).execute()
    print(f"run complete -> {results}")
    return 0


def _partial_run(args, judge_needed: bool = True) -> Run:
    results = Path(args.results)
    if not (results / "sample.jsonl").is_file():
        raise ConfigError(f"{results} has no sample.jsonl; run the pipeline first")
    judge_raw = None
    if judge_needed:
        if args.judge_endpoint:
            judge_raw = {
                "kind": "http",
                "endpoint": args.judge_endpoint,
                "model_id": args.judge_model or "",
                "api_key_env": args.api_key_env or "",
            }
        else:
            judge_raw = {"kind": "stub"}
    raw = {
        "dataset": {"path": str(results / "sample.jsonl"), "format": "jsonl"},
        "output_dir": str(results),
        "cache_dir": str(args.cache_dir),
        "judge": judge_raw,
        "judge_runs": getattr(args, "runs", 20),
        "generator": None,
        "conditions": ["none"],
    }
    return Run(RunConfig.from_dict(raw))


def cmd_judge(args) -> int:
    run = _partial_run(args)
    run.stage_judge()
    run.stage_aggregate()
    run.finalize()
    print(f"fidelity judgements -> {run.artifact('fidelity.jsonl')}")
    return 0


def cmd_car(args) -> int:
    run = _partial_run(args)
    run.stage_car()
    if run.artifact("fidelity.jsonl").is_file():
        run.stage_aggregate()
    else:
        from .judging import CARJudgement, car_rates

        judgements = [
            CARJudgement.from_record(json.loads(line))
            for line in run.artifact("car.jsonl").read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        write_atomic(run.artifact("car_rates.json"), dump_json(car_rates(judgements)))
    run.finalize()
    print(f"adoption judgements -> {run.artifact('car.jsonl')}")
    return 0


def cmd_analyze_trace(args) -> int:
    results = Path(args.results)
    fidelity = results / "fidelity.jsonl"
    out = analyze_traces(
        Path(args.traces),
        results / "trace_analysis.json",
        fidelity_path=fidelity if fidelity.is_file() else None,
    )
    print(f"trace analysis -> {out}")
    return 0


def cmd_ckplug_decode(args) -> int:
    tasks = read_tasks(args.tasks)
    model = ToyLM(args.fixture)
    baselines = {
        t.instance_id: t.prompt for t in tasks if t.condition is ContextCondition.NONE
    }
    contextual = [t for t in tasks if t.condition is not ContextCondition.NONE]
    params = DecodeParams(max_tokens=args.max_tokens)
    cfg = BlendConfig(alpha=args.alpha, top_k=args.top_k)
    records = []
    all_logs = []
    for task in contextual:
        baseline_prompt = baselines.get(task.instance_id)
        if baseline_prompt is None:
            raise DataError(f"no no-context task for instance {task.instance_id}")
        record, logs = decode_with_ckplug(
            model,
            task.prompt,
            baseline_prompt,
            params,
            cfg,
            instance_id=task.instance_id,
            condition=task.condition.value,
        )
        records.append(record.to_record())
        all_logs.extend(logs)
    out_dir = Path(args.out)
    write_atomic(out_dir / "ckplug_translations.jsonl", dump_jsonl(records))
    write_step_logs(all_logs, out_dir / "ckplug_steps.jsonl")
    print(f"decoded {len(records)} tasks -> {out_dir}")
    return 0


def cmd_mix(args) -> int:
    dataset = ingest(args.input, "jsonl")
    noise_sets = read_noise_sets(args.noise) if args.noise else {}
    strategy = MixStrategy(args.strategy)
    examples = build_mix(dataset, noise_sets, strategy, args.seed)
    train_path, manifest_path = emit_manifest(examples, strategy, args.out, seed=args.seed)
    print(f"{len(examples)} examples -> {train_path} (manifest {manifest_path})")
    return 0


def cmd_report(args) -> int:
    paths = report(args.results, args.kind, args.out)
    for path in paths:
        print(f"wrote {path}")
    return 0


def cmd_correlate(args) -> int:
    results = Path(args.results)
    fidelity_path = results / "fidelity.jsonl"
    if not fidelity_path.is_file():
        raise DataError(f"missing artifact {fidelity_path}")
    auto = {}
    for line in fidelity_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        if record["condition"] == args.condition and record["score"] is not None:
            auto[record["instance_id"]] = float(record["score"])
    human = read_human_annotations(args.human)
    shared = set(auto) & set(human)
    if args.intersect:
        auto = {k: auto[k] for k in shared}
        human = {k: human[k] for k in shared}
    result = correlate_with_humans(auto, human)
    payload = {
        "condition": args.condition,
        "items": len(auto),
        "pearson": result.pearson,
        "spearman": result.spearman,
        "kendall": result.kendall,
    }
    write_atomic(results / "correlations.json", dump_json(payload))
    print(
        f"n={len(auto)}  r={result.pearson}  rho={result.spearman}  tau={result.kendall}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragmt",
        description="Noise-robustness workbench for retrieval-augmented LLM translation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a source corpus into canonical JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="jsonl", choices=["jsonl", "csv", "tsv"])
    p.add_argument("--out", required=True)
    p.add_argument("--rejects", default=None)
    p.add_argument("--tier-overrides", default=None, help="JSON file mapping pair->tier")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sample", help="seeded per-pair sampling of a canonical corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synth", help="generate the four noisy meanings per instance")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--generator-kind", default="mock", choices=["mock", "http"])
    p.add_argument("--generator-endpoint", default=None)
    p.add_argument("--generator-model", default=None)
    p.add_argument("--api-key-env", default=None)
    p.add_argument("--templates-dir", default=None)
    p.add_argument("--meaning-language", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate-noise", help="TER/similarity/contradiction statistics")
    p.add_argument("--input", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sim-endpoint", default=None)
    p.add_argument("--nli-endpoint", default=None)
    p.add_argument("--stub-similarity", type=float, default=0.8)
    p.add_argument("--stub-label", default="contradiction")
    p.set_defaults(func=cmd_validate_noise)

    p = sub.add_parser("run", help="execute the full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    for name, handler in (("judge", cmd_judge), ("car", cmd_car)):
        p = sub.add_parser(name, help=f"standalone {name} stage over an existing run")
        p.add_argument("--results", required=True)
        p.add_argument("--cache-dir", default="cache")
        p.add_argument("--judge-endpoint", default=None)
        p.add_argument("--judge-model", default=None)
        p.add_argument("--api-key-env", default=None)
        p.add_argument("--runs", type=int, default=20)
        p.set_defaults(func=handler)

    p = sub.add_parser("analyze-trace", help="attention allocation and span entropy")
    p.add_argument("--traces", required=True)
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_analyze_trace)

    p = sub.add_parser("ckplug-decode", help="confidence-gated blended decoding")
    p.add_argument("--tasks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--max-tokens", type=int, default=64)
    p.add_argument("--fixture", default=str(DEFAULT_TOYLM_FIXTURE))
    p.set_defaults(func=cmd_ckplug_decode)

    p = sub.add_parser("mix", help="build a fine-tuning data mix")
    p.add_argument("--input", required=True)
    p.add_argument("--noise", default=None)
    p.add_argument("--strategy", required=True, choices=[s.value for s in MixStrategy])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("report", help="emit CSV plot data and text tables")
    p.add_argument("--results", required=True)
    p.add_argument("--kind", required=True, choices=list(REPORT_KINDS))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("correlate", help="correlate fidelity with human annotations")
    p.add_argument("--results", required=True)
    p.add_argument("--human", required=True)
    p.add_argument("--condition", default="none")
    p.add_argument(
        "--intersect",
        action="store_true",
        help="restrict to items present on both sides instead of erroring",
    )
    p.set_defaults(func=cmd_correlate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ClientError as exc:
        print(f"client error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
