"""Benchmark harness: prompt generation, sharded runs, manifests, sweeps.

A run decodes a batch of synthetic prompts with the baseline and/or the
speculative decoder and writes one JSONL trace file per shard.  Shards
partition prompts by prompt_id modulo world_size and execute as
concurrent in-process workers sharing the (read-only) models; each
worker owns its output file, so no cross-shard synchronization exists.
After all shards finish, the merge pass rewrites every record into a
single file ordered by (prompt_id, kind), making the merged output
independent of completion order.

A manifest records the resolved configuration, package version, and
kernel backend, enough to reproduce the run's token outputs bit for bit
(wall-clock timings of course vary).

Structural failures inside the speculative loop (an invalid proposed
tree, a bad mask or commit) do not kill the run: the offending prompt is
written out as a failure-dump JSON including the tree arrays, and the
shard moves on.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .drafter import DraftConfig, build_vocab_subset
from .engine import DecodeConfig, TreeHook, generate_baseline, generate_speculative
from .errors import ConfigurationError, TreespecError
from .model import Model, ModelConfig, init_model
from .stats import summarize
from .trace import TurnTrace

__all__ = [
    "DEFAULT_TEACHER",
    "default_drafter_config",
    "Prompt",
    "gen_prompts",
    "shard",
    "RunConfig",
    "RunPaths",
    "run",
    "sweep",
    "SWEEP_PARAMS",
]

# Small enough for millisecond decodes, large enough that attention over
# the prefix dominates a forward pass.
DEFAULT_TEACHER = ModelConfig(
    vocab_size=64, embed_dim=16, num_layers=2, num_heads=2, ffn_dim=64, seed=7
)


def default_drafter_config(teacher: ModelConfig) -> ModelConfig:
    """Early-exit drafter: the teacher's first layer(s) as a weak guesser.

    Sharing the teacher's seed and dimensions makes the drafter's
    parameters a prefix of the teacher's (parameter draws are keyed by
    name), so its proposals correlate with the teacher without any
    training: acceptance statistics are non-trivial and degrade when the
    drafter's context is truncated, as a distilled drafter's would.
    """
    return replace(teacher, num_layers=max(1, teacher.num_layers - 1))


# =============================================================================
# Prompts and sharding
# =============================================================================


@dataclass(frozen=True)
class Prompt:
    prompt_id: int
    tokens: np.ndarray


def gen_prompts(seed: int, count: int, min_len: int, max_len: int, vocab_size: int) -> list[Prompt]:
    """Deterministic synthetic prompts, ids 0..count-1."""
    if count < 1:
        raise ConfigurationError(f"prompt count must be >= 1, got {count}")
    if min_len < 1 or max_len < min_len:
        raise ConfigurationError(f"bad prompt length range [{min_len}, {max_len}]")
    rng = np.random.default_rng(seed)
    prompts = []
    for pid in range(count):
        length = int(rng.integers(min_len, max_len + 1))
        prompts.append(Prompt(pid, rng.integers(0, vocab_size, length, dtype=np.int64)))
    return prompts


def shard(prompts: list[Prompt], world_size: int, rank: int) -> list[Prompt]:
    """Prompts owned by `rank`: prompt_id modulo world_size."""
    if world_size < 1:
        raise ConfigurationError(f"world_size must be >= 1, got {world_size}")
    if not 0 <= rank < world_size:
        raise ConfigurationError(f"rank {rank} outside [0, {world_size})")
    return [p for p in prompts if p.prompt_id % world_size == rank]


# =============================================================================
# Run configuration
# =============================================================================


RUN_KINDS = ("both", "baseline", "speculative")


@dataclass
class RunConfig:
    """Everything a run needs; JSON round-trippable for config files."""

    out_dir: str
    decode: DecodeConfig
    teacher: ModelConfig = DEFAULT_TEACHER
    drafter: ModelConfig | None = None  # None selects the early-exit default
    prompt_seed: int = 0
    prompt_count: int = 20
    min_prompt_len: int = 8
    max_prompt_len: int = 24
    subset_size: int | None = None
    world_size: int = 1
    runs: str = "both"

    def __post_init__(self):
        if self.runs not in RUN_KINDS:
            raise ConfigurationError(f"runs must be one of {RUN_KINDS}, got {self.runs!r}")
        if self.world_size < 1:
            raise ConfigurationError(f"world_size must be >= 1, got {self.world_size}")

    def to_dict(self) -> dict:
        d = {
            "out_dir": self.out_dir,
            "teacher": self.teacher.as_dict(),
            "drafter": self.drafter.as_dict() if self.drafter else None,
            "decode": {
                "max_new_tokens": self.decode.max_new_tokens,
                "mode": self.decode.mode,
                "commit_mode": self.decode.commit_mode,
                "fast_cache_reorder": self.decode.fast_cache_reorder,
                "eos_token": self.decode.eos_token,
                "profile": self.decode.profile,
                "draft": {
                    "node_budget": self.decode.draft.node_budget,
                    "depth_bound": self.decode.draft.depth_bound,
                    "branch_factor": self.decode.draft.branch_factor,
                    "window": self.decode.draft.window,
                },
            },
            "prompt_seed": self.prompt_seed,
            "prompt_count": self.prompt_count,
            "min_prompt_len": self.min_prompt_len,
            "max_prompt_len": self.max_prompt_len,
            "subset_size": self.subset_size,
            "world_size": self.world_size,
            "runs": self.runs,
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        dec = d["decode"]
        decode = DecodeConfig(
            max_new_tokens=dec["max_new_tokens"],
            draft=DraftConfig(**dec["draft"]),
            mode=dec.get("mode", "performance"),
            commit_mode=dec.get("commit_mode", "path"),
            fast_cache_reorder=dec.get("fast_cache_reorder", True),
            eos_token=dec.get("eos_token"),
            profile=dec.get("profile", False),
        )
        return RunConfig(
            out_dir=d["out_dir"],
            decode=decode,
            teacher=ModelConfig.from_dict(d["teacher"]) if d.get("teacher") else DEFAULT_TEACHER,
            drafter=ModelConfig.from_dict(d["drafter"]) if d.get("drafter") else None,
            prompt_seed=d.get("prompt_seed", 0),
            prompt_count=d.get("prompt_count", 20),
            min_prompt_len=d.get("min_prompt_len", 8),
            max_prompt_len=d.get("max_prompt_len", 24),
            subset_size=d.get("subset_size"),
            world_size=d.get("world_size", 1),
            runs=d.get("runs", "both"),
        )


@dataclass
class RunPaths:
    """Artifacts written by one run."""

    out_dir: Path
    manifest: Path
    rank_traces: list[Path]
    merged: Path
    failures: list[Path] = field(default_factory=list)


# =============================================================================
# Execution
# =============================================================================


def _dump_failure(out_dir: Path, prompt: Prompt, err: TreespecError) -> Path:
    payload: dict = {
        "prompt_id": prompt.prompt_id,
        "prompt": prompt.tokens.tolist(),
        "error": {"type": type(err).__name__, "message": str(err)},
    }
    for attr in ("kind", "node"):
        if hasattr(err, attr):
            payload["error"][attr] = getattr(err, attr)
    tree = getattr(err, "tree", None)
    if tree is not None:
        payload["tree"] = {
            "parent": tree.parent.tolist(),
            "depth": tree.depth.tolist(),
            "tokens": tree.tokens.tolist(),
            "valid": tree.valid.tolist(),
        }
    path = out_dir / f"failure_prompt{prompt.prompt_id}.json"
    path.write_text(json.dumps(payload, indent=2))
    return path


def run(config: RunConfig, tree_hook: TreeHook | None = None) -> RunPaths:
    """Execute a full benchmark run; see the module docstring.

    tree_hook is forwarded to the speculative decoder (tests use it to
    inject corrupted trees and exercise the failure-dump path).
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    teacher = init_model(config.teacher)
    drafter_cfg = config.drafter or default_drafter_config(config.teacher)
    if drafter_cfg.vocab_size != config.teacher.vocab_size:
        raise ConfigurationError("drafter and teacher must share a vocabulary")
    drafter = init_model(drafter_cfg)

    prompts = gen_prompts(
        config.prompt_seed,
        config.prompt_count,
        config.min_prompt_len,
        config.max_prompt_len,
        config.teacher.vocab_size,
    )

    decode_cfg = config.decode
    if config.subset_size is not None:
        corpus = np.concatenate([p.tokens for p in prompts])
        subset = build_vocab_subset(corpus, config.subset_size, cache_dir=out_dir)
        decode_cfg = replace(decode_cfg, draft=replace(decode_cfg.draft, vocab_subset=subset))

    failures: list[Path] = []

    def rank_worker(rank: int) -> Path:
        path = out_dir / f"traces_rank{rank}.jsonl"
        with open(path, "w") as fh:
            for prompt in shard(prompts, config.world_size, rank):
                if config.runs in ("both", "baseline"):
                    _, tr = generate_baseline(teacher, prompt.tokens, decode_cfg, prompt.prompt_id)
                    fh.write(json.dumps(tr.to_dict()) + "\n")
                if config.runs in ("both", "speculative"):
                    try:
                        _, tr = generate_speculative(
                            teacher,
                            drafter,
                            prompt.tokens,
                            decode_cfg,
                            prompt.prompt_id,
                            tree_hook=tree_hook,
                        )
                    except TreespecError as err:
                        failures.append(_dump_failure(out_dir, prompt, err))
                        continue
                    fh.write(json.dumps(tr.to_dict()) + "\n")
        return path

    with ThreadPoolExecutor(max_workers=config.world_size) as pool:
        rank_paths = list(pool.map(rank_worker, range(config.world_size)))

    # Deterministic merge, independent of shard completion order.
    records = []
    for path in rank_paths:
        with open(path) as fh:
            records.extend(json.loads(line) for line in fh if line.strip())
    records.sort(key=lambda r: (r["prompt_id"], r["kind"]))
    merged = out_dir / "traces_merged.jsonl"
    with open(merged, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(
            {
                "package_version": __version__,
                "kernel_backend": _kernels.BACKEND,
                "created_unix": time.time(),
                "config": config.to_dict(),
                "resolved_drafter": drafter_cfg.as_dict(),
                "prompt_count": len(prompts),
                "trace_files": [p.name for p in rank_paths],
                "merged_file": merged.name,
                "failures": [p.name for p in failures],
            },
            indent=2,
        )
    )
    return RunPaths(
        out_dir=out_dir,
        manifest=manifest_path,
        rank_traces=rank_paths,
        merged=merged,
        failures=failures,
    )


# =============================================================================
# Parameter sweeps
# =============================================================================

SWEEP_PARAMS = ("node_budget", "depth_bound", "window")


def sweep(base: RunConfig, param: str, values: list, out_dir: str | Path) -> list[dict]:
    """Re-run the same prompt set under several draft settings.

    param is one of SWEEP_PARAMS; values are applied to the draft config
    one at a time (window accepts None for "no truncation").  Each
    setting runs into its own subdirectory; a sweep.csv / sweep.json at
    the top level collects one summary row per setting.
    """
    if param not in SWEEP_PARAMS:
        raise ConfigurationError(f"sweep param must be one of {SWEEP_PARAMS}, got {param!r}")
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for value in values:
        label = "none" if value is None else str(value)
        sub = out_dir / f"{param}_{label}"
        draft = replace(base.decode.draft, **{param: value})
        cfg = replace(base, decode=replace(base.decode, draft=draft), out_dir=str(sub))
        paths = run(cfg)
        summary = summarize(paths.merged, out_dir=sub)
        row = {"param": param, "value": value}
        for metric in ("baseline_tok_s", "speculative_tok_s", "speedup", "accept_len", "tokens_per_teacher_step"):
            if metric in summary["metrics"]:
                row[f"{metric}_mean"] = summary["metrics"][metric]["mean"]
        row["mean_tree_nodes"] = summary["counts"].get("mean_tree_nodes")
        row["iterations"] = summary["counts"]["iterations"]
        rows.append(row)

    (out_dir / "sweep.json").write_text(json.dumps(rows, indent=2))
    fieldnames = sorted({k for row in rows for k in row})
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return rows
