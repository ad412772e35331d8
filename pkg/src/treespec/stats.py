"""Summary statistics over trace files: percentiles, acceptance curves,
stage breakdowns, throughput aggregation.

Percentiles use the nearest-rank definition on the sorted sample: the
p-th percentile is the value at 1-based index ceil(p/100 * n).  No
interpolation, so every reported percentile is an observed sample.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ConfigurationError
from .trace import STAGE_NAMES, TurnTrace

__all__ = [
    "nearest_rank",
    "SummaryStats",
    "accept_position_fractions",
    "read_traces",
    "summarize",
    "stage_breakdown",
]


def nearest_rank(values, pct: float) -> float:
    """Nearest-rank percentile: sorted[ceil(pct/100 * n)] (1-based)."""
    if not 0 < pct <= 100:
        raise ConfigurationError(f"percentile must be in (0, 100], got {pct}")
    data = sorted(values)
    if not data:
        raise ConfigurationError("percentile of an empty sample")
    rank = max(1, math.ceil(pct / 100.0 * len(data)))
    return float(data[rank - 1])


@dataclass
class SummaryStats:
    """Mean plus nearest-rank percentiles of one metric's samples."""

    count: int
    mean: float
    p50: float
    p90: float
    p99: float

    @staticmethod
    def from_samples(values) -> "SummaryStats":
        values = list(values)
        if not values:
            raise ConfigurationError("cannot summarize an empty sample")
        return SummaryStats(
            count=len(values),
            mean=float(sum(values)) / len(values),
            p50=nearest_rank(values, 50),
            p90=nearest_rank(values, 90),
            p99=nearest_rank(values, 99),
        )


def accept_position_fractions(accepts: list[int]) -> list[float]:
    """fraction of iterations accepting at least p tokens, for p = 1.. max.

    Non-increasing by construction; empty when no iteration accepted
    anything.
    """
    if not accepts:
        return []
    top = max(accepts)
    n = len(accepts)
    return [sum(1 for a in accepts if a >= p) / n for p in range(1, top + 1)]


# =============================================================================
# Trace aggregation
# =============================================================================


def read_traces(paths) -> list[TurnTrace]:
    """Load TurnTrace records from one or more JSONL files."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    traces = []
    for path in paths:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    traces.append(TurnTrace.from_dict(json.loads(line)))
    return traces


def _tok_s(trace: TurnTrace) -> float:
    return trace.output_len / (trace.wall_ns * 1e-9)


def summarize(trace_paths, out_dir: str | Path | None = None) -> dict:
    """Aggregate traces into per-metric SummaryStats tables.

    Metrics: baseline and speculative tokens/second, paired per-prompt
    speedup, accepted tokens per iteration, tokens per teacher step
    (decode-loop emissions over verification forwards), and the
    accept-position curve.  Prompts present on only one side are counted
    but excluded from paired metrics.

    When out_dir is given, writes summary.json and summary.csv there.
    """
    traces = read_traces(trace_paths)
    baselines = {t.prompt_id: t for t in traces if t.kind == "baseline"}
    specs = {t.prompt_id: t for t in traces if t.kind == "speculative"}

    metrics: dict[str, SummaryStats] = {}
    if baselines:
        metrics["baseline_tok_s"] = SummaryStats.from_samples([_tok_s(t) for t in baselines.values()])
    if specs:
        metrics["speculative_tok_s"] = SummaryStats.from_samples([_tok_s(t) for t in specs.values()])
        accepts = [r.accepted for t in specs.values() for r in t.iterations]
        if accepts:
            metrics["accept_len"] = SummaryStats.from_samples(accepts)
        tps = [
            sum(r.emitted for r in t.iterations) / len(t.iterations)
            for t in specs.values()
            if t.iterations
        ]
        if tps:
            metrics["tokens_per_teacher_step"] = SummaryStats.from_samples(tps)
    paired = sorted(set(baselines) & set(specs))
    if paired:
        metrics["speedup"] = SummaryStats.from_samples(
            [_tok_s(specs[p]) / _tok_s(baselines[p]) for p in paired]
        )

    result = {
        "metrics": {name: asdict(s) for name, s in metrics.items()},
        "accept_pos": accept_position_fractions(
            [r.accepted for t in specs.values() for r in t.iterations]
        ),
        "counts": {
            "baseline_turns": len(baselines),
            "speculative_turns": len(specs),
            "paired_prompts": len(paired),
            "iterations": sum(len(t.iterations) for t in specs.values()),
            "fast_fallbacks": sum(r.fast_fallback for t in specs.values() for r in t.iterations),
        },
    }
    if specs:
        sizes = [r.tree_nodes for t in specs.values() for r in t.iterations]
        if sizes:
            result["counts"]["mean_tree_nodes"] = sum(sizes) / len(sizes)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.json").write_text(json.dumps(result, indent=2))
        with open(out_dir / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "count", "mean", "p50", "p90", "p99"])
            for name, s in metrics.items():
                writer.writerow([name, s.count, s.mean, s.p50, s.p90, s.p99])
    return result


def stage_breakdown(trace_paths, out_dir: str | Path | None = None) -> dict:
    """Per-stage timing table from profiled speculative traces.

    Reports mean, p99, and tail ratio (p99 / mean) in nanoseconds for
    each pipeline stage, plus the per-turn prefill.  Raises
    ConfigurationError when the traces carry no stage timings (the run
    was not profiled).
    """
    traces = read_traces(trace_paths)
    samples: dict[str, list[int]] = {name: [] for name in STAGE_NAMES}
    for t in traces:
        if t.kind != "speculative":
            continue
        samples["prefill"].append(t.prefill_ns)
        for rec in t.iterations:
            if rec.stages is not None:
                for name in STAGE_NAMES:
                    if name != "prefill":
                        samples[name].append(getattr(rec.stages, name))
    if not any(samples[n] for n in STAGE_NAMES if n != "prefill"):
        raise ConfigurationError(
            "traces carry no stage timings; re-run with profiling enabled"
        )

    rows = {}
    for name in STAGE_NAMES:
        if not samples[name]:
            continue
        stats = SummaryStats.from_samples(samples[name])
        rows[name] = {
            "count": stats.count,
            "mean_ns": stats.mean,
            "p99_ns": stats.p99,
            "tail_ratio": stats.p99 / stats.mean if stats.mean else float("nan"),
        }

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "breakdown.json").write_text(json.dumps(rows, indent=2))
        with open(out_dir / "breakdown.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "count", "mean_ns", "p99_ns", "tail_ratio"])
            for name, row in rows.items():
                writer.writerow([name, row["count"], row["mean_ns"], row["p99_ns"], row["tail_ratio"]])
    return rows
