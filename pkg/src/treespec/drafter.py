"""Draft-tree proposal by best-first expansion of a small model.

The drafter scores frontier nodes by cumulative log-probability under
the draft model and always expands the highest-scoring node that is
still below the depth bound, attaching its top branch_factor children,
until the node budget is spent or no expandable node remains.  The
expansion sequence is fully deterministic (log-prob ties break toward
the earlier-created node, token ties toward the smaller id), so the node
set under budget M is a prefix of the node set under budget M+1.

The drafter recomputes a full forward per expansion rather than keeping
its own cache; at desk scale the clarity is worth more than the reuse.

Two cheap accuracy/cost knobs mirror what production drafters do:

  * window: the drafter sees only the last `window` tokens of the
    context (re-positioned from 0), while verification always uses the
    full context.
  * vocab_subset: drafting reads logits only at a frequency-selected
    subset of token ids (built once per corpus and cached as JSON).
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .model import Model, prefill
from .tree import SpecTree, linearize

__all__ = [
    "DraftConfig",
    "SubsetMap",
    "truncate_context",
    "build_vocab_subset",
    "draft_logits_on_subset",
    "propose_tree",
]


# =============================================================================
# Configuration
# =============================================================================


@dataclass(frozen=True)
class SubsetMap:
    """Kept token ids (ascending) for subset-restricted drafting."""

    kept: np.ndarray  # int64, strictly increasing
    corpus_hash: str

    @property
    def size(self) -> int:
        return int(self.kept.shape[0])


@dataclass
class DraftConfig:
    """Shape and budget of proposed trees."""

    node_budget: int
    depth_bound: int
    branch_factor: int = 4
    window: int | None = None
    vocab_subset: SubsetMap | None = None

    def __post_init__(self):
        if self.node_budget < 1:
            raise ConfigurationError(f"node_budget must be >= 1, got {self.node_budget}")
        if self.depth_bound < 1:
            raise ConfigurationError(f"depth_bound must be >= 1, got {self.depth_bound}")
        if self.branch_factor < 1:
            raise ConfigurationError(f"branch_factor must be >= 1, got {self.branch_factor}")
        if self.window is not None and self.window < 1:
            raise ConfigurationError(f"window must be >= 1 or None, got {self.window}")


# =============================================================================
# Context and vocabulary restriction
# =============================================================================


def truncate_context(context: np.ndarray, window: int | None) -> np.ndarray:
    """Last `window` tokens of the context (all of it when window is None)."""
    context = np.asarray(context, dtype=np.int64)
    if window is None or context.shape[0] <= window:
        return context
    return context[-window:]


def _corpus_hash(corpus: np.ndarray, size: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(corpus, dtype=np.int64).tobytes())
    h.update(str(size).encode())
    return h.hexdigest()


def build_vocab_subset(
    corpus, size: int, cache_dir: str | Path | None = None
) -> SubsetMap:
    """Top-`size` token ids by corpus frequency, ties toward smaller id.

    The result is cached as a content-addressed JSON file
    (subset_<hash>.json) when cache_dir is given; a later call with the
    same corpus and size loads the identical subset from disk.
    """
    corpus = np.asarray(corpus, dtype=np.int64).ravel()
    if size < 1:
        raise ConfigurationError(f"subset size must be >= 1, got {size}")
    if corpus.size == 0:
        raise ConfigurationError("subset corpus must be non-empty")
    digest = _corpus_hash(corpus, size)

    cache_file = None
    if cache_dir is not None:
        cache_file = Path(cache_dir) / f"subset_{digest[:16]}.json"
        if cache_file.exists():
            stored = json.loads(cache_file.read_text())
            if stored["corpus_hash"] == digest and stored["size"] == size:
                return SubsetMap(
                    kept=np.array(stored["kept"], dtype=np.int64), corpus_hash=digest
                )

    counts = np.bincount(corpus)
    # Stable sort on (-count, id): ids are the original order, so a stable
    # descending-count sort breaks ties toward the smaller id.
    order = np.argsort(-counts, kind="stable")
    kept = np.sort(order[: min(size, counts.shape[0])]).astype(np.int64)

    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        cache_file.write_text(
            json.dumps({"corpus_hash": digest, "size": size, "kept": kept.tolist()})
        )
    return SubsetMap(kept=kept, corpus_hash=digest)


def draft_logits_on_subset(logits_row: np.ndarray, subset: SubsetMap) -> np.ndarray:
    """Full-vocab logits gathered at the kept token ids."""
    if subset.kept.max() >= logits_row.shape[-1]:
        raise ConfigurationError(
            f"subset references token {int(subset.kept.max())} beyond vocab {logits_row.shape[-1]}"
        )
    return logits_row[subset.kept]


# =============================================================================
# Best-first proposal
# =============================================================================


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def _next_logits(model: Model, tokens: np.ndarray) -> np.ndarray:
    """Next-token logits after `tokens`, from a fresh full forward."""
    return prefill(model, tokens, model.new_cache()).logits[0]


def propose_tree(drafter: Model, context, cfg: DraftConfig) -> SpecTree:
    """Propose a speculation tree continuing `context`.

    The last context token is the pending root; drafted nodes are its
    possible continuations.  Slot 0 of the returned tree carries a
    placeholder token; the decode loop overwrites it with the pending
    token (which is already the last element of `context`).

    Top-branch_factor children are chosen by draft log-probability
    (restricted to cfg.vocab_subset when set), so siblings always carry
    distinct tokens.
    """
    context = np.asarray(context, dtype=np.int64)
    if context.ndim != 1 or context.size == 0:
        raise ConfigurationError("draft context must be a non-empty 1-d token sequence")
    base_ctx = truncate_context(context, cfg.window)
    subset = cfg.vocab_subset

    edges: list[tuple[int, int]] = []
    # Heap entries: (-cumulative logp, creation order, insertion ref, depth, path tokens).
    heap: list[tuple[float, int, int, int, tuple[int, ...]]] = [(0.0, 0, 0, 0, ())]
    created = 1

    while heap and len(edges) < cfg.node_budget:
        neg_score, _, ref, depth, path = heapq.heappop(heap)
        if depth >= cfg.depth_bound:
            continue
        logits = _next_logits(drafter, np.concatenate([base_ctx, np.array(path, dtype=np.int64)]))
        logp = _log_softmax(logits)
        if subset is not None:
            cand_ids = subset.kept
            cand_logp = logp[subset.kept]
        else:
            cand_ids = np.arange(logp.shape[0])
            cand_logp = logp
        # Stable descending sort: equal log-probs resolve to the smaller id.
        top = np.argsort(-cand_logp, kind="stable")[: cfg.branch_factor]
        for idx in top:
            if len(edges) >= cfg.node_budget:
                break
            token = int(cand_ids[idx])
            edges.append((ref, token))
            heapq.heappush(
                heap,
                (
                    neg_score - float(cand_logp[idx]),
                    created,
                    len(edges),
                    depth + 1,
                    path + (token,),
                ),
            )
            created += 1
    return linearize(edges)
