"""Trace records written by the decode loops and read by the harness.

One TurnTrace is produced per (prompt, decoder) pair.  Speculative turns
carry one IterationRecord per verification; baseline turns carry
per-token timings instead.  Stage timings exist only when the turn ran
with profiling enabled, because the instrumentation itself perturbs the
wall-clock numbers.

Accounting conventions:
  * teacher_forward_count counts decode-loop teacher evaluations: one
    per emitted token for the baseline, one per verification for the
    speculative loop (a reference-mode verification counts once even
    though it replays paths with many small steps).  The prefill is
    recorded separately.
  * A speculative iteration emits accepted + 1 tokens (the accepted
    chain plus the bonus token).  The first generated token comes from
    the prefill logits before the loop starts, so when no eos truncation
    occurs, output_len = 1 + sum(accepted_i + 1), capped at the token
    budget; records keep pre-cap values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

__all__ = ["StageTimings", "IterationRecord", "TurnTrace", "STAGE_NAMES"]

# Stage names in pipeline order; "prefill" is tracked at turn level.
STAGE_NAMES = ("draft", "tensorize", "mask", "verify", "accept", "commit", "prefill")


@dataclass
class StageTimings:
    """Nanoseconds spent per pipeline stage within one iteration."""

    draft: int = 0
    tensorize: int = 0
    mask: int = 0
    verify: int = 0
    accept: int = 0
    commit: int = 0


@dataclass
class IterationRecord:
    """Outcome of one speculative iteration (pre-truncation values)."""

    accepted: int
    emitted: int
    tree_nodes: int
    tree_depth: int
    fast_fallback: bool = False
    commit_rebuild_steps: int = 0
    stages: StageTimings | None = None


@dataclass
class TurnTrace:
    """Everything recorded about decoding one prompt with one decoder."""

    kind: str  # "baseline" | "speculative"
    prompt_id: int
    prompt_len: int
    output_len: int
    tokens: list[int]
    wall_ns: int
    prefill_ns: int
    teacher_forward_count: int
    mode: str | None = None  # verification mode, speculative only
    commit_mode: str | None = None
    iterations: list[IterationRecord] = field(default_factory=list)
    per_token_ns: list[int] | None = None  # baseline, profiling only

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TurnTrace":
        iters = [
            IterationRecord(
                accepted=i["accepted"],
                emitted=i["emitted"],
                tree_nodes=i["tree_nodes"],
                tree_depth=i["tree_depth"],
                fast_fallback=i.get("fast_fallback", False),
                commit_rebuild_steps=i.get("commit_rebuild_steps", 0),
                stages=StageTimings(**i["stages"]) if i.get("stages") else None,
            )
            for i in d.get("iterations", [])
        ]
        return TurnTrace(
            kind=d["kind"],
            prompt_id=d["prompt_id"],
            prompt_len=d["prompt_len"],
            output_len=d["output_len"],
            tokens=list(d["tokens"]),
            wall_ns=d["wall_ns"],
            prefill_ns=d["prefill_ns"],
            teacher_forward_count=d["teacher_forward_count"],
            mode=d.get("mode"),
            commit_mode=d.get("commit_mode"),
            iterations=iters,
            per_token_ns=d.get("per_token_ns"),
        )
