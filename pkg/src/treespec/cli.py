"""Command-line entry point.

Subcommands:

* run              decode a prompt batch, write traces + manifest
* sweep            repeat a run across draft-parameter settings
* summarize        aggregate trace files into metric tables
* breakdown        per-stage timing table from profiled traces
* bench-backends   compare the compiled and numpy attention kernels

`run` and `sweep` accept either a JSON config file (--config) or flags;
flags override the file.  Window accepts an integer or "none".
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import _kernels, __version__
from .bench import bench_backends
from .drafter import DraftConfig
from .engine import COMMIT_MODES, VERIFY_MODES, DecodeConfig
from .errors import TreespecError
from .harness import RUN_KINDS, SWEEP_PARAMS, RunConfig, run, sweep
from .stats import stage_breakdown, summarize

__all__ = ["main", "build_parser"]


def _parse_window(text: str) -> int | None:
    """An integer window, or "none" for untruncated drafter context."""
    if text.lower() == "none":
        return None
    return int(text)


class _Window:
    """Wrapper distinguishing "--window none" from "--window absent"."""

    def __init__(self, text: str):
        self.value = _parse_window(text)


def _parse_onoff(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on|off, got {text!r}")
    return text == "on"


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run config; flags override its fields")
    p.add_argument("--out-dir", help="output directory for traces and manifest")
    p.add_argument("--max-new-tokens", type=int)
    p.add_argument("--mode", choices=VERIFY_MODES, help="verification strategy")
    p.add_argument("--commit", choices=COMMIT_MODES, dest="commit_mode")
    p.add_argument(
        "--fast-cache-reorder",
        type=_parse_onoff,
        metavar="on|off",
        help="prefix-sharing shortcut when committing an accepted path",
    )
    p.add_argument("--M", type=int, dest="node_budget", help="draft tree node budget")
    p.add_argument("--dmax", type=int, dest="depth_bound", help="draft tree depth bound")
    p.add_argument("--branch-factor", type=int)
    p.add_argument("--window", type=_Window, help="drafter context window, or 'none'")
    p.add_argument("--subset-size", type=int, help="drafter vocabulary subset size")
    p.add_argument("--eos", type=int, dest="eos_token")
    p.add_argument("--profile", action="store_true", help="record per-stage timings")
    p.add_argument("--seed", type=int, dest="prompt_seed")
    p.add_argument("--prompts", type=int, dest="prompt_count")
    p.add_argument("--min-prompt-len", type=int)
    p.add_argument("--max-prompt-len", type=int)
    p.add_argument("--world-size", type=int)
    p.add_argument("--runs", choices=RUN_KINDS, help="which decoders to run")


_DRAFT_FLAGS = ("node_budget", "depth_bound", "branch_factor", "window")
_DECODE_FLAGS = ("max_new_tokens", "mode", "commit_mode", "fast_cache_reorder", "eos_token")
_RUN_FLAGS = (
    "out_dir",
    "prompt_seed",
    "prompt_count",
    "min_prompt_len",
    "max_prompt_len",
    "subset_size",
    "world_size",
    "runs",
)


def _resolve_run_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        base = json.loads(Path(args.config).read_text())
    else:
        base = {
            "out_dir": None,
            "decode": {
                "max_new_tokens": 32,
                "draft": {"node_budget": 12, "depth_bound": 4, "branch_factor": 4, "window": None},
            },
        }
    draft = dict(base["decode"]["draft"])
    decode = dict(base["decode"])
    for name in _DRAFT_FLAGS:
        value = getattr(args, name, None)
        if isinstance(value, _Window):
            draft[name] = value.value
        elif value is not None:
            draft[name] = value
    for name in _DECODE_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            decode[name] = value
    if args.profile:
        decode["profile"] = True
    decode["draft"] = draft
    base["decode"] = decode
    for name in _RUN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    if not base.get("out_dir"):
        raise TreespecError("an output directory is required (--out-dir or config out_dir)")
    return RunConfig.from_dict(base)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treespec", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"treespec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="decode a prompt batch and write traces")
    _add_run_flags(p_run)

    p_sweep = sub.add_parser("sweep", help="repeat a run across draft settings")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    p_sweep.add_argument(
        "--values",
        required=True,
        help="comma-separated values; 'none' allowed for window",
    )

    p_sum = sub.add_parser("summarize", help="aggregate traces into metric tables")
    p_sum.add_argument("traces", nargs="+", type=Path)
    p_sum.add_argument("--out-dir", type=Path, help="also write summary.json / summary.csv")

    p_br = sub.add_parser("breakdown", help="per-stage timings from profiled traces")
    p_br.add_argument("traces", nargs="+", type=Path)
    p_br.add_argument("--out-dir", type=Path, help="also write breakdown.json / breakdown.csv")

    p_bench = sub.add_parser("bench-backends", help="compare attention kernel backends")
    p_bench.add_argument("--out-dir", type=Path, help="also write bench.json")
    p_bench.add_argument("--repeats", type=int, default=20)

    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    config = _resolve_run_config(args)
    paths = run(config)
    summary = summarize(paths.merged, out_dir=paths.out_dir)
    print(f"wrote {paths.merged} ({summary['counts']})")
    for name, stats in summary["metrics"].items():
        print(f"  {name}: mean {stats['mean']:.4g}  p50 {stats['p50']:.4g}  p99 {stats['p99']:.4g}")
    if paths.failures:
        print(f"  {len(paths.failures)} prompt(s) failed; dumps in {paths.out_dir}", file=sys.stderr)
        return 1
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = _resolve_run_config(args)
    values = []
    for text in args.values.split(","):
        text = text.strip()
        values.append(None if text.lower() == "none" else int(text))
    rows = sweep(config, args.param, values, config.out_dir)
    for row in rows:
        print(json.dumps(row))
    return 0


def _cmd_summarize(args: argparse.Namespace) -> int:
    result = summarize([str(p) for p in args.traces], out_dir=args.out_dir)
    print(json.dumps(result, indent=2))
    return 0


def _cmd_breakdown(args: argparse.Namespace) -> int:
    result = stage_breakdown([str(p) for p in args.traces], out_dir=args.out_dir)
    print(json.dumps(result, indent=2))
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    report = bench_backends(out_dir=args.out_dir, repeats=args.repeats)
    print(f"backends: {report['backends']} (active: {report['active']})")
    for row in report["kernels"]:
        print(json.dumps(row))
    for row in report["forwards"]:
        print(json.dumps(row))
    for row in report["decode"]:
        print(json.dumps(row))
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "summarize": _cmd_summarize,
    "breakdown": _cmd_breakdown,
    "bench-backends": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TreespecError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
