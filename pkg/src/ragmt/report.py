"""Report emission: CSV plot data plus aligned text tables derived from
persisted run artifacts."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .errors import DataError
from .judging import round_display
from .pipeline import write_atomic
from .traces import align_idiom_span, attention_allocation, read_traces, span_confidence

REPORT_KINDS = (
    "fidelity_table",
    "car_bars",
    "attention_shares",
    "entropy_fidelity",
    "mitigation_table",
)


class ReportError(DataError):
    pass


def _require(path: Path) -> Path:
    if not path.is_file():
        raise ReportError(f"missing artifact for requested report: {path}")
    return path


def _load_json(path: Path):
    return json.loads(_require(path).read_text(encoding="utf-8"))


def _csv_text(header: list[str], rows: list[list]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _aligned_table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for index, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if index == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _emit(out_dir: Path, name: str, header: list[str], rows: list[list]) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    txt_path = out_dir / f"{name}.txt"
    write_atomic(csv_path, _csv_text(header, rows))
    write_atomic(txt_path, _aligned_table(header, rows))
    return [csv_path, txt_path]


def fidelity_table(results_dir: Path, out_dir: Path) -> list[Path]:
    rows_raw = _load_json(results_dir / "aggregate.json")
    pairs: list[str] = sorted({p for row in rows_raw for p in row["fidelity_by_pair"]})
    header = ["condition", *pairs, "avg_f", "avg_c"]
    rows = []
    for row in rows_raw:
        cells = [row["fidelity_by_pair"].get(pair, "") for pair in pairs]
        cells = [round_display(c) if isinstance(c, float) else c for c in cells]
        avg_c = row["avg_aux"] if row["avg_aux"] is not None else ""
        rows.append([row["condition"], *cells, row["avg_fidelity"], avg_c])
    return _emit(out_dir, "fidelity_table", header, rows)


def car_bars(results_dir: Path, out_dir: Path) -> list[Path]:
    rates = _load_json(results_dir / "car_rates.json")
    if not rates:
        raise ReportError(f"no adoption judgements in {results_dir / 'car_rates.json'}")
    rows = [[condition, round_display(rate)] for condition, rate in rates.items()]
    return _emit(out_dir, "car_bars", ["condition", "car_percent"], rows)


def analyze_traces(traces_path: Path, out_path: Path, fidelity_path: Path | None = None) -> Path:
    """Reduce a trace file into per-trace allocations, idiom spans and span
    entropies, plus per-condition allocation means; persisted as JSON."""
    traces = read_traces(traces_path)
    if not traces:
        raise ReportError(f"no traces in {traces_path}")
    fidelity_by_key: dict[tuple[str, str], float] = {}
    if fidelity_path is not None and Path(fidelity_path).is_file():
        for line in Path(fidelity_path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            if record.get("score") is not None:
                fidelity_by_key[(record["instance_id"], record["condition"])] = record["score"]

    per_trace = []
    per_condition: dict[str, list] = {}
    for trace in traces:
        allocation = attention_allocation(trace)
        span = align_idiom_span(trace)
        entry = {
            "instance_id": trace.instance_id,
            "condition": trace.condition,
            "model_id": trace.model_id,
            "allocation": allocation.to_record(),
            "span": [span.start, span.end],
            "span_empty": span.empty,
        }
        if not span.empty:
            fidelity = fidelity_by_key.get((trace.instance_id, trace.condition))
            report = span_confidence(trace, span, fidelity=fidelity)
            entry["mean_entropy"] = report.mean_entropy
            entry["fidelity"] = report.fidelity
        per_trace.append(entry)
        per_condition.setdefault(trace.condition, []).append(allocation)

    condition_means = {}
    for condition, allocations in sorted(per_condition.items()):
        count = len(allocations)
        condition_means[condition] = {
            "idiom_share": sum(a.idiom_share for a in allocations) / count,
            "context_share": sum(a.context_share for a in allocations) / count,
            "other_share": sum(a.other_share for a in allocations) / count,
            "traces": count,
        }
    payload = {"per_trace": per_trace, "per_condition": condition_means}
    write_atomic(out_path, json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n")
    return out_path


def attention_shares(results_dir: Path, out_dir: Path) -> list[Path]:
    analysis = _load_json(results_dir / "trace_analysis.json")
    rows = [
        [
            condition,
            stats["idiom_share"],
            stats["context_share"],
            stats["other_share"],
            stats["traces"],
        ]
        for condition, stats in analysis["per_condition"].items()
    ]
    header = ["condition", "idiom_share", "context_share", "other_share", "traces"]
    return _emit(out_dir, "attention_shares", header, rows)


def entropy_fidelity(results_dir: Path, out_dir: Path) -> list[Path]:
    analysis = _load_json(results_dir / "trace_analysis.json")
    rows = []
    for entry in analysis["per_trace"]:
        if entry.get("span_empty"):
            continue
        rows.append(
            [
                entry["instance_id"],
                entry["condition"],
                entry["mean_entropy"],
                entry.get("fidelity", ""),
            ]
        )
    if not rows:
        raise ReportError(
            f"no non-empty idiom spans in {results_dir / 'trace_analysis.json'}; "
            "nothing to pair with fidelity"
        )
    header = ["instance_id", "condition", "mean_entropy", "fidelity"]
    return _emit(out_dir, "entropy_fidelity", header, rows)


def mitigation_table(results_dir: Path, out_dir: Path) -> list[Path]:
    """Interleave fidelity and adoption per condition for every strategy
    subdirectory (one completed run each) under `results_dir`."""
    strategies = sorted(
        p for p in Path(results_dir).iterdir() if (p / "aggregate.json").is_file()
    )
    if not strategies:
        raise ReportError(f"no strategy runs with aggregate.json under {results_dir}")
    conditions: list[str] = []
    table: dict[str, dict[str, tuple]] = {}
    for strategy_dir in strategies:
        rows_raw = _load_json(strategy_dir / "aggregate.json")
        rates_path = strategy_dir / "car_rates.json"
        rates = json.loads(rates_path.read_text(encoding="utf-8")) if rates_path.is_file() else {}
        per_condition = {}
        for row in rows_raw:
            condition = row["condition"]
            if condition not in conditions:
                conditions.append(condition)
            per_condition[condition] = (
                row["avg_fidelity"],
                round_display(rates[condition]) if condition in rates else "",
            )
        table[strategy_dir.name] = per_condition
    header = ["strategy"]
    for condition in conditions:
        header.extend([f"{condition}_fidelity", f"{condition}_car"])
    rows = []
    for strategy, per_condition in table.items():
        row = [strategy]
        for condition in conditions:
            fidelity, car = per_condition.get(condition, ("", ""))
            row.extend([fidelity, car])
        rows.append(row)
    return _emit(out_dir, "mitigation_table", header, rows)


def report(results_dir: str | Path, kind: str, out_dir: str | Path | None = None) -> list[Path]:
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir else results_dir / "reports"
    handlers = {
        "fidelity_table": fidelity_table,
        "car_bars": car_bars,
        "attention_shares": attention_shares,
        "entropy_fidelity": entropy_fidelity,
        "mitigation_table": mitigation_table,
    }
    if kind not in handlers:
        raise ReportError(f"unknown report kind {kind!r}; expected one of {REPORT_KINDS}")
    return handlers[kind](results_dir, out_dir)
