"""Greedy decode loops: plain autoregressive baseline and tree-speculative.

The speculative loop keeps two integers of state besides the committed
cache: the generated output so far, and the pending token (the most
recent teacher argmax, whose key/value rows are not yet committed).
Each iteration drafts a tree rooted at the pending token, verifies every
node in one batched teacher forward against a branch cache, walks the
tree greedily to find the longest drafted chain matching the teacher's
argmax decisions, commits the surviving rows, and carries the argmax at
the end of the chain as the next pending token.  With greedy acceptance
this reproduces the baseline's output token for token; speculation only
changes how many teacher forwards that takes.

Verification has two modes with identical acceptance semantics:

  * performance: one forward_masked_batch over all slots under the
    ancestor-only tree mask.
  * reference: each node evaluated by sequential steps along its
    root-to-node path on a branch replica.  Shared path prefixes are
    evaluated once (depth-first over the tree), which is arithmetically
    identical to replaying every path from scratch.

Committing has two modes as well.  "path" gathers the accepted rows out
of the verified branch by index.  "length" re-extends a fresh replica
sequentially with the accepted tokens and adopts a prefix of it; the
extra teacher steps are recorded per iteration and excluded from
teacher_forward_count, which counts verifications only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cache import (
    BranchCache,
    CommittedCache,
    commit_by_length,
    commit_by_path_indices,
    replicate,
)
from .drafter import DraftConfig, propose_tree
from .errors import ConfigurationError, TreeStructureError
from .mask import TreeMask, build_tree_mask
from .model import Model, forward_masked_batch, forward_step, prefill
from .trace import IterationRecord, StageTimings, TurnTrace
from .tree import (
    AncestorTable,
    SpecTree,
    accepted_path_indices,
    build_ancestor_table,
    child_table,
    validate_tree,
    with_root_token,
)

__all__ = [
    "VERIFY_MODES",
    "COMMIT_MODES",
    "DecodeConfig",
    "VerifyResult",
    "AcceptOutcome",
    "StepEvent",
    "generate_baseline",
    "generate_speculative",
    "verify_tree_batched",
    "verify_tree_reference",
    "accept_greedy",
]

VERIFY_MODES = ("performance", "reference")
COMMIT_MODES = ("path", "length")


# =============================================================================
# Config and result types
# =============================================================================


@dataclass
class DecodeConfig:
    """Everything the decode loops need besides the models and prompt."""

    max_new_tokens: int
    draft: DraftConfig = field(default_factory=lambda: DraftConfig(node_budget=12, depth_bound=4))
    mode: str = "performance"
    commit_mode: str = "path"
    fast_cache_reorder: bool = True
    eos_token: int | None = None
    profile: bool = False

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ConfigurationError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.mode not in VERIFY_MODES:
            raise ConfigurationError(f"mode must be one of {VERIFY_MODES}, got {self.mode!r}")
        if self.commit_mode not in COMMIT_MODES:
            raise ConfigurationError(
                f"commit_mode must be one of {COMMIT_MODES}, got {self.commit_mode!r}"
            )


@dataclass
class VerifyResult:
    """Teacher evaluation of every tree slot, plus the extended branch."""

    logits: np.ndarray  # (slots, vocab)
    argmax: np.ndarray  # (slots,) greedy next token per slot
    branch: BranchCache


@dataclass
class AcceptOutcome:
    """Result of the greedy acceptance walk.

    emitted is the accepted chain's tokens followed by the bonus token
    (the teacher argmax at the end of the chain), so it always holds
    accepted + 1 tokens.
    """

    chain: list[int]  # accepted slot ids, root-descending
    bonus: int
    emitted: list[int]

    @property
    def accepted(self) -> int:
        return len(self.chain)


@dataclass
class StepEvent:
    """Handed to the step hook after each speculative iteration."""

    iteration: int
    tree: SpecTree
    verify: VerifyResult
    outcome: AcceptOutcome
    path_indices: np.ndarray | None
    fast_path_used: bool | None
    committed_before: CommittedCache
    committed_after: CommittedCache
    output: list[int]  # snapshot including this iteration's emissions


TreeHook = Callable[[SpecTree], SpecTree]
StepHook = Callable[[StepEvent], None]


# =============================================================================
# Baseline
# =============================================================================


def generate_baseline(model: Model, prompt, cfg: DecodeConfig, prompt_id: int = 0) -> tuple[list[int], TurnTrace]:
    """Greedy decoding, one teacher forward per emitted token.

    Each loop turn emits the argmax of the current logits and steps the
    model on it, which both writes the token's cache rows and produces
    the next logits.  Stops at max_new_tokens or after emitting eos.
    """
    prompt = np.asarray(prompt, dtype=np.int64)
    t_turn = time.perf_counter_ns()
    cache = model.new_cache()
    out = prefill(model, prompt, cache)
    prefill_ns = time.perf_counter_ns() - t_turn
    logits = out.logits[0]

    tokens: list[int] = []
    per_token_ns: list[int] | None = [] if cfg.profile else None
    while len(tokens) < cfg.max_new_tokens:
        t0 = time.perf_counter_ns()
        nxt = int(np.argmax(logits))  # ties resolve to the smallest token id
        step = forward_step(model, nxt, cache)
        tokens.append(nxt)
        if per_token_ns is not None:
            per_token_ns.append(time.perf_counter_ns() - t0)
        if cfg.eos_token is not None and nxt == cfg.eos_token:
            break
        logits = step.logits[0]

    trace = TurnTrace(
        kind="baseline",
        prompt_id=prompt_id,
        prompt_len=int(prompt.size),
        output_len=len(tokens),
        tokens=tokens,
        wall_ns=time.perf_counter_ns() - t_turn,
        prefill_ns=prefill_ns,
        teacher_forward_count=len(tokens),
        per_token_ns=per_token_ns,
    )
    return tokens, trace


# =============================================================================
# Verification
# =============================================================================


def verify_tree_batched(
    teacher: Model,
    committed: CommittedCache,
    tree: SpecTree,
    prefix_len: int,
    tmask: TreeMask | None = None,
    anc: AncestorTable | None = None,
) -> VerifyResult:
    """Evaluate all slots in one masked batched forward on a fresh branch."""
    if prefix_len != committed.seq_len:
        raise ConfigurationError(
            f"prefix_len {prefix_len} does not match committed length {committed.seq_len}"
        )
    if anc is None:
        anc = build_ancestor_table(tree)
    if tmask is None:
        tmask = build_tree_mask(tree, anc, prefix_len, dtype=teacher.config.dtype)
    branch = replicate(committed)
    positions = prefix_len + tree.depth
    out = forward_masked_batch(teacher, tree.tokens, branch, tmask.rows, positions)
    return VerifyResult(logits=out.logits, argmax=out.logits.argmax(axis=1), branch=branch)


def verify_tree_reference(
    teacher: Model,
    committed: CommittedCache,
    tree: SpecTree,
    prefix_len: int,
    tmask: TreeMask | None = None,
    anc: AncestorTable | None = None,
) -> VerifyResult:
    """Evaluate each node by sequential steps along its root-to-node path.

    Depth-first with one branch replica per node: a node's replica is a
    copy of its parent's, extended by one step, so shared path prefixes
    are computed once without changing any node's arithmetic.  The
    returned branch holds every slot's key/value rows in slot order,
    identical in layout to the batched mode's branch.  The unused tmask
    and anc parameters keep the two verify functions call-compatible.
    """
    if prefix_len != committed.seq_len:
        raise ConfigurationError(
            f"prefix_len {prefix_len} does not match committed length {committed.seq_len}"
        )
    if not bool(tree.valid.all()):
        raise ConfigurationError("reference verification requires a tree without padded slots")

    slots = tree.slots
    caches: list[BranchCache] = [None] * slots  # type: ignore[list-item]
    logits = np.empty((slots, teacher.config.vocab_size), dtype=teacher.config.dtype)

    root_cache = replicate(committed)
    logits[0] = forward_step(teacher, int(tree.tokens[0]), root_cache).logits[0]
    caches[0] = root_cache
    for k in range(1, slots):  # parents precede children in slot order
        node_cache = BranchCache(
            [layer.copy() for layer in caches[int(tree.parent[k])].layers], prefix_len
        )
        logits[k] = forward_step(teacher, int(tree.tokens[k]), node_cache).logits[0]
        caches[k] = node_cache

    branch = replicate(committed)
    for li in range(len(branch.layers)):
        k_rows = np.stack([caches[k].layers[li].view()[0][-1] for k in range(slots)])
        v_rows = np.stack([caches[k].layers[li].view()[1][-1] for k in range(slots)])
        branch.layers[li].append(k_rows, v_rows)
    return VerifyResult(logits=logits, argmax=logits.argmax(axis=1), branch=branch)


_VERIFIERS = {"performance": verify_tree_batched, "reference": verify_tree_reference}


# =============================================================================
# Acceptance
# =============================================================================


def accept_greedy(tree: SpecTree, verify: VerifyResult) -> AcceptOutcome:
    """Walk the tree accepting drafted tokens that match the teacher argmax.

    Starting at the root, descend to the child carrying the argmax of
    the current slot (smallest slot id if several children duplicate the
    token); stop when no child matches.  The argmax at the stopping slot
    is the bonus token: it is certified by the same forward but its
    cache rows are not yet computed, so it becomes the next pending root.
    """
    children = child_table(tree)
    chain: list[int] = []
    cur = 0
    while True:
        target = int(verify.argmax[cur])
        nxt = next(
            (k for k in children[cur] if tree.valid[k] and int(tree.tokens[k]) == target), None
        )
        if nxt is None:
            break
        chain.append(nxt)
        cur = nxt
    emitted = [int(tree.tokens[k]) for k in chain] + [int(verify.argmax[cur])]
    return AcceptOutcome(chain=chain, bonus=int(verify.argmax[cur]), emitted=emitted)


# =============================================================================
# Speculative loop
# =============================================================================


def generate_speculative(
    teacher: Model,
    drafter: Model,
    prompt,
    cfg: DecodeConfig,
    prompt_id: int = 0,
    tree_hook: TreeHook | None = None,
    step_hook: StepHook | None = None,
) -> tuple[list[int], TurnTrace]:
    """Tree-speculative greedy decoding; see the module docstring.

    tree_hook, when given, may replace each proposed tree before
    validation (used by tests to inject corrupt trees); step_hook
    receives a StepEvent after every iteration.

    Raises TreeStructureError (with the offending tree attached as
    .tree) if a proposed tree fails validation; the harness turns that
    into a failure dump.
    """
    if drafter.config.vocab_size != teacher.config.vocab_size:
        raise ConfigurationError(
            f"drafter vocab {drafter.config.vocab_size} != teacher vocab {teacher.config.vocab_size}"
        )
    prompt = np.asarray(prompt, dtype=np.int64)
    verify_fn = _VERIFIERS[cfg.mode]
    profile = cfg.profile

    t_turn = time.perf_counter_ns()
    committed = teacher.new_cache()
    pre = prefill(teacher, prompt, committed)
    prefill_ns = time.perf_counter_ns() - t_turn

    pending = int(np.argmax(pre.logits[0]))
    output: list[int] = [pending]
    records: list[IterationRecord] = []
    hit_eos = cfg.eos_token is not None and pending == cfg.eos_token

    iteration = 0
    while not hit_eos and len(output) < cfg.max_new_tokens:
        prefix_len = committed.seq_len
        context = np.concatenate([prompt, np.asarray(output, dtype=np.int64)])
        stages = StageTimings() if profile else None

        t0 = time.perf_counter_ns()
        tree = with_root_token(propose_tree(drafter, context, cfg.draft), pending)
        if tree_hook is not None:
            tree = tree_hook(tree)
        if profile:
            stages.draft = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        try:
            validate_tree(tree)
        except TreeStructureError as err:
            err.tree = tree  # let the harness dump the offending tree
            raise
        anc = build_ancestor_table(tree)
        if profile:
            stages.tensorize = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        tmask = build_tree_mask(tree, anc, prefix_len, dtype=teacher.config.dtype)
        if profile:
            stages.mask = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        result = verify_fn(teacher, committed, tree, prefix_len, tmask=tmask, anc=anc)
        if profile:
            stages.verify = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        outcome = accept_greedy(tree, result)
        chain, emitted = outcome.chain, outcome.emitted
        if cfg.eos_token is not None and cfg.eos_token in emitted:
            # Drop everything after the first eos; if eos sits inside the
            # chain, the bonus token is dropped and the chain shortened so
            # the committed cache matches the returned output exactly.
            cut = emitted.index(cfg.eos_token) + 1
            emitted = emitted[:cut]
            chain = chain[: min(cut, len(chain))]
            hit_eos = True
        if profile:
            stages.accept = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        path = None
        fast_used = None
        rebuild_steps = 0
        if cfg.commit_mode == "path":
            path = accepted_path_indices(tree, chain, prefix_len)
            committed_after, fast_used = commit_by_path_indices(
                committed, result.branch, path, cfg.fast_cache_reorder
            )
        else:
            linear = replicate(committed)
            for tok in [pending] + [int(tree.tokens[k]) for k in chain]:
                forward_step(teacher, tok, linear)
                rebuild_steps += 1
            committed_after = commit_by_length(committed, linear, 1 + len(chain))
        if profile:
            stages.commit = time.perf_counter_ns() - t0

        output.extend(emitted)
        records.append(
            IterationRecord(
                accepted=len(chain),
                emitted=len(emitted),
                tree_nodes=tree.node_count,
                tree_depth=int(tree.depth.max()),
                fast_fallback=bool(cfg.commit_mode == "path" and cfg.fast_cache_reorder and not fast_used),
                commit_rebuild_steps=rebuild_steps,
                stages=stages,
            )
        )
        if step_hook is not None:
            step_hook(
                StepEvent(
                    iteration=iteration,
                    tree=tree,
                    verify=result,
                    outcome=outcome,
                    path_indices=path,
                    fast_path_used=fast_used,
                    committed_before=committed,
                    committed_after=committed_after,
                    output=list(output),
                )
            )
        committed = committed_after
        pending = outcome.bonus
        iteration += 1

    tokens = output[: cfg.max_new_tokens]
    trace = TurnTrace(
        kind="speculative",
        prompt_id=prompt_id,
        prompt_len=int(prompt.size),
        output_len=len(tokens),
        tokens=tokens,
        wall_ns=time.perf_counter_ns() - t_turn,
        prefill_ns=prefill_ns,
        teacher_forward_count=len(records),
        mode=cfg.mode,
        commit_mode=cfg.commit_mode,
        iterations=records,
    )
    return tokens, trace
