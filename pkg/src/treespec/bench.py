"""Backend comparison: compiled attention kernel versus the numpy one.

Three levels of measurement, coarsest to finest:

* a short end-to-end speculative decode per backend (same prompts, same
  models, only the attention kernel swapped),
* single forward passes (one-token step and a tree-sized masked batch)
  over a committed prefix,
* the raw kernel on representative (rows x prefix) shapes.

Each comparison also reports the maximum absolute difference between
backend outputs on identical inputs.  The compiled kernel accumulates in
double precision like the numpy one, so agreement is expected near
machine epsilon; a tolerance failure here means a broken build, not an
acceptable rounding drift.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import _kernels
from .cache import replicate
from .drafter import DraftConfig
from .engine import DecodeConfig, generate_speculative
from .errors import ConfigurationError
from .harness import DEFAULT_TEACHER, default_drafter_config, gen_prompts
from .model import forward_masked_batch, forward_step, init_model, prefill
from .numerics import most_negative

__all__ = ["bench_kernels", "bench_forwards", "bench_decode", "bench_backends"]


def _best_of(fn, repeats: int) -> float:
    """Best wall time in seconds over `repeats` calls."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _require_backends() -> list[str]:
    names = _kernels.available_backends()
    if len(names) < 2:
        raise ConfigurationError(
            f"backend comparison needs both kernels, found only {names}"
        )
    return names


def bench_kernels(repeats: int = 20, seed: int = 0) -> list[dict]:
    """Raw kernel timings on representative attention shapes."""
    names = _require_backends()
    rng = np.random.default_rng(seed)
    dim, heads = 16, 2
    neg = most_negative(np.float64)
    rows = []
    for q_rows, kv_rows in [(1, 64), (13, 64), (13, 512), (64, 512)]:
        q = rng.standard_normal((q_rows, dim))
        keys = rng.standard_normal((kv_rows, dim))
        values = rng.standard_normal((kv_rows, dim))
        mask = np.where(rng.random((q_rows, kv_rows)) < 0.5, 0.0, neg)
        mask[:, 0] = 0.0  # keep every row attending somewhere
        outs = {}
        row = {"q_rows": q_rows, "kv_rows": kv_rows}
        for name in names:
            kern = _kernels.get_kernel(name)
            outs[name] = kern(q, keys, values, mask, heads)
            row[f"{name}_s"] = _best_of(lambda k=kern: k(q, keys, values, mask, heads), repeats)
        row["max_abs_diff"] = float(max(
            np.max(np.abs(outs[a] - outs[b]))
            for i, a in enumerate(names)
            for b in names[i + 1:]
        ))
        rows.append(row)
    return rows


def bench_forwards(repeats: int = 10, prefix_len: int = 256, batch_rows: int = 13) -> list[dict]:
    """Single-step and masked-batch forward timings per backend."""
    names = _require_backends()
    rows = []
    caches = {}
    rng = np.random.default_rng(1)
    prompt = rng.integers(0, DEFAULT_TEACHER.vocab_size, prefix_len, dtype=np.int64)
    models = {name: init_model(DEFAULT_TEACHER, attn_kernel=_kernels.get_kernel(name)) for name in names}
    for name, model in models.items():
        cache = model.new_cache()
        prefill(model, prompt, cache)
        caches[name] = cache

    step_out = {}
    row = {"op": "forward_step", "prefix_len": prefix_len}
    for name, model in models.items():
        step_out[name] = forward_step(model, 3, replicate(caches[name])).logits
        row[f"{name}_s"] = _best_of(
            lambda m=model, c=caches[name]: forward_step(m, 3, replicate(c)), repeats
        )
    row["max_abs_diff"] = _pairwise_diff(step_out, names)
    rows.append(row)

    neg = most_negative(DEFAULT_TEACHER.dtype)
    mask = np.full((batch_rows, prefix_len + batch_rows), neg)
    mask[:, :prefix_len] = 0.0
    for i in range(batch_rows):
        mask[i:, prefix_len + i] = 0.0  # chain layout: row j sees slots 0..j
    tokens = rng.integers(0, DEFAULT_TEACHER.vocab_size, batch_rows, dtype=np.int64)
    positions = prefix_len + np.arange(batch_rows, dtype=np.int64)

    batch_out = {}
    row = {"op": "masked_batch", "prefix_len": prefix_len, "rows": batch_rows}
    for name, model in models.items():
        out = forward_masked_batch(model, tokens, replicate(caches[name]), mask, positions)
        batch_out[name] = out.logits
        row[f"{name}_s"] = _best_of(
            lambda m=model, c=caches[name]: forward_masked_batch(m, tokens, replicate(c), mask, positions),
            repeats,
        )
    row["max_abs_diff"] = _pairwise_diff(batch_out, names)
    rows.append(row)
    return rows


def _pairwise_diff(outs: dict, names: list[str]) -> float:
    return float(max(
        np.max(np.abs(outs[a] - outs[b]))
        for i, a in enumerate(names)
        for b in names[i + 1:]
    ))


def bench_decode(max_new_tokens: int = 32, prompt_count: int = 4) -> list[dict]:
    """Short speculative decodes with the attention kernel swapped."""
    names = _require_backends()
    drafter_cfg = default_drafter_config(DEFAULT_TEACHER)
    cfg = DecodeConfig(max_new_tokens=max_new_tokens, draft=DraftConfig(node_budget=12, depth_bound=4))
    prompts = gen_prompts(11, prompt_count, 8, 24, DEFAULT_TEACHER.vocab_size)

    rows = []
    outputs: dict[str, list] = {name: [] for name in names}
    for name in names:
        kern = _kernels.get_kernel(name)
        teacher = init_model(DEFAULT_TEACHER, attn_kernel=kern)
        drafter = init_model(drafter_cfg, attn_kernel=kern)
        total_tokens = 0
        t0 = time.perf_counter()
        for prompt in prompts:
            tokens, _ = generate_speculative(teacher, drafter, prompt.tokens, cfg, prompt.prompt_id)
            outputs[name].append(tokens)
            total_tokens += len(tokens)
        elapsed = time.perf_counter() - t0
        rows.append({
            "backend": name,
            "prompts": prompt_count,
            "tokens": total_tokens,
            "tok_s": total_tokens / elapsed,
        })
    first = names[0]
    agree = all(
        outputs[first][i] == outputs[other][i]
        for other in names[1:]
        for i in range(prompt_count)
    )
    for row in rows:
        row["tokens_agree"] = agree
    return rows


def bench_backends(out_dir: str | Path | None = None, repeats: int = 20) -> dict:
    """Run all three benchmark levels and optionally write bench.json."""
    report = {
        "backends": _kernels.available_backends(),
        "active": _kernels.BACKEND,
        "kernels": bench_kernels(repeats=repeats),
        "forwards": bench_forwards(repeats=max(3, repeats // 4)),
        "decode": bench_decode(),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "bench.json").write_text(json.dumps(report, indent=2))
    return report
