"""Best-first tree proposal: chain oracle, structure laws, restriction knobs."""

import json

import numpy as np
import pytest

from treespec.drafter import (
    DraftConfig,
    build_vocab_subset,
    draft_logits_on_subset,
    propose_tree,
    truncate_context,
)
from treespec.errors import ConfigurationError
from treespec.model import forward_step, prefill
from treespec.tree import path_to_node, validate_tree

CONTEXT = np.array([5, 17, 3, 42, 9, 30], dtype=np.int64)


def _paths(tree):
    """Root-to-node token tuples for every drafted node."""
    return {tuple(path_to_node(tree, k).tolist()) for k in range(1, tree.slots)}


# =============================================================================
# Oracles
# =============================================================================


def test_branch_factor_one_is_greedy_rollout(drafter):
    # With one child per expansion the proposal must equal a plain greedy
    # rollout of the draft model, computed here with sequential steps.
    budget = 5
    tree = propose_tree(drafter, CONTEXT, DraftConfig(node_budget=budget, depth_bound=budget, branch_factor=1))

    cache = drafter.new_cache()
    out = prefill(drafter, CONTEXT, cache)
    rollout = []
    for _ in range(budget):
        nxt = int(np.argmax(out.logits[0]))
        rollout.append(nxt)
        out = forward_step(drafter, nxt, cache)

    assert tree.node_count == budget
    assert tree.parent.tolist() == [0] + list(range(budget))  # a chain
    assert tree.tokens[1:].tolist() == rollout
    validate_tree(tree)


def test_depth_one_proposes_top_tokens(drafter):
    # Depth 1 with a wide branch factor reduces best-first search to "take
    # the highest-probability next tokens", checkable straight from logits.
    logits = prefill(drafter, CONTEXT, drafter.new_cache()).logits[0]
    m = 6
    expected = np.argsort(-logits, kind="stable")[:m]
    tree = propose_tree(
        drafter, CONTEXT, DraftConfig(node_budget=m, depth_bound=1, branch_factor=64)
    )
    assert tree.node_count == m
    assert (tree.depth[1:] == 1).all()
    assert sorted(tree.tokens[1:].tolist()) == sorted(int(t) for t in expected)


def _best_first_oracle(drafter, context, cfg):
    """Independent re-statement of the expansion rule, list-based.

    Repeatedly expands the frontier entry with the highest cumulative
    log-probability (ties toward the earliest-created entry), attaching
    its top branch_factor continuations.  Returns drafted paths.
    """
    def next_logp(path):
        toks = np.concatenate([context, np.array(path, dtype=np.int64)])
        row = prefill(drafter, toks, drafter.new_cache()).logits[0]
        shifted = row - row.max()
        return shifted - np.log(np.exp(shifted).sum())

    frontier = [(0.0, 0, ())]  # (cum logp, creation counter, path)
    counter = 1
    paths = []
    while frontier and len(paths) < cfg.node_budget:
        best = max(frontier, key=lambda e: (e[0], -e[1]))
        frontier.remove(best)
        cum, _, path = best
        if len(path) >= cfg.depth_bound:
            continue
        logp = next_logp(path)
        for tok in np.argsort(-logp, kind="stable")[: cfg.branch_factor]:
            if len(paths) >= cfg.node_budget:
                break
            child = path + (int(tok),)
            paths.append(child)
            frontier.append((cum + float(logp[tok]), counter, child))
            counter += 1
    return set(paths)


def test_best_first_matches_oracle(drafter):
    for budget, depth, branch in [(3, 2, 2), (8, 3, 3), (12, 4, 4), (6, 2, 5)]:
        cfg = DraftConfig(node_budget=budget, depth_bound=depth, branch_factor=branch)
        tree = propose_tree(drafter, CONTEXT, cfg)
        validate_tree(tree)
        assert _paths(tree) == _best_first_oracle(drafter, CONTEXT, cfg)


# =============================================================================
# Structure laws
# =============================================================================


def test_tree_respects_bounds(drafter):
    rng = np.random.default_rng(71)
    for _ in range(10):
        budget = int(rng.integers(1, 16))
        depth = int(rng.integers(1, 5))
        branch = int(rng.integers(1, 5))
        ctx = rng.integers(0, 64, int(rng.integers(1, 12)))
        tree = propose_tree(drafter, ctx, DraftConfig(budget, depth, branch))
        validate_tree(tree)
        assert 1 <= tree.node_count <= budget
        assert tree.depth.max() <= depth
        children = {}
        for k in range(1, tree.slots):
            children.setdefault(int(tree.parent[k]), []).append(int(tree.tokens[k]))
        for toks in children.values():
            assert len(toks) <= branch
            assert len(set(toks)) == len(toks), "sibling tokens must be distinct"


def test_budget_monotonicity(drafter):
    # The expansion sequence is deterministic, so the drafted path set
    # under budget M is always a subset of the set under budget M+1.
    prev = set()
    for budget in range(1, 14):
        tree = propose_tree(drafter, CONTEXT, DraftConfig(budget, 4, 3))
        paths = _paths(tree)
        assert prev <= paths
        prev = paths


def test_proposal_is_deterministic(drafter):
    cfg = DraftConfig(node_budget=10, depth_bound=3, branch_factor=3)
    a = propose_tree(drafter, CONTEXT, cfg)
    b = propose_tree(drafter, CONTEXT, cfg)
    assert np.array_equal(a.parent, b.parent)
    assert np.array_equal(a.tokens, b.tokens)


# =============================================================================
# Context window
# =============================================================================


def test_truncate_context():
    ctx = np.arange(10, dtype=np.int64)
    assert truncate_context(ctx, None).tolist() == list(range(10))
    assert truncate_context(ctx, 3).tolist() == [7, 8, 9]
    assert truncate_context(ctx, 20).tolist() == list(range(10))


def test_window_equals_truncated_context(drafter):
    cfg_window = DraftConfig(node_budget=8, depth_bound=3, branch_factor=2, window=3)
    cfg_plain = DraftConfig(node_budget=8, depth_bound=3, branch_factor=2)
    a = propose_tree(drafter, CONTEXT, cfg_window)
    b = propose_tree(drafter, CONTEXT[-3:], cfg_plain)
    assert np.array_equal(a.parent, b.parent)
    assert np.array_equal(a.tokens, b.tokens)


def test_window_changes_proposals(drafter):
    # The repositioned short context must generally alter the drafted tree;
    # this pins that the window knob is actually wired through.
    wide = propose_tree(drafter, CONTEXT, DraftConfig(12, 4, 4))
    narrow = propose_tree(drafter, CONTEXT, DraftConfig(12, 4, 4, window=2))
    assert _paths(wide) != _paths(narrow)


# =============================================================================
# Vocabulary subset
# =============================================================================


def test_subset_frozen_example():
    subset = build_vocab_subset(np.array([3, 1, 3, 0, 1, 3]), size=2)
    assert subset.kept.tolist() == [1, 3]
    assert subset.size == 2


def test_subset_tie_breaks_toward_smaller_id():
    subset = build_vocab_subset(np.array([9, 2, 9, 2, 5, 5]), size=2)
    assert subset.kept.tolist() == [2, 5]


def test_subset_cache_round_trip(tmp_path):
    corpus = np.array([1, 1, 2, 3, 3, 3, 7])
    first = build_vocab_subset(corpus, size=3, cache_dir=tmp_path)
    files = list(tmp_path.glob("subset_*.json"))
    assert len(files) == 1
    stored = json.loads(files[0].read_text())
    assert stored["kept"] == first.kept.tolist()

    again = build_vocab_subset(corpus, size=3, cache_dir=tmp_path)
    assert again.kept.tolist() == first.kept.tolist()
    assert again.corpus_hash == first.corpus_hash
    assert len(list(tmp_path.glob("subset_*.json"))) == 1

    other = build_vocab_subset(corpus, size=2, cache_dir=tmp_path)
    assert other.size == 2
    assert len(list(tmp_path.glob("subset_*.json"))) == 2


def test_drafting_restricted_to_subset(drafter):
    subset = build_vocab_subset(np.array([1, 2, 3, 4, 5, 6, 7, 8]), size=8)
    cfg = DraftConfig(node_budget=10, depth_bound=3, branch_factor=3, vocab_subset=subset)
    tree = propose_tree(drafter, CONTEXT, cfg)
    assert set(tree.tokens[1:].tolist()) <= set(subset.kept.tolist())


def test_draft_logits_on_subset():
    subset = build_vocab_subset(np.array([0, 2, 2]), size=2)
    row = np.array([10.0, 11.0, 12.0])
    assert draft_logits_on_subset(row, subset).tolist() == [10.0, 12.0]
    with pytest.raises(ConfigurationError):
        draft_logits_on_subset(np.array([1.0]), subset)


# =============================================================================
# Validation
# =============================================================================


def test_draft_config_validation():
    with pytest.raises(ConfigurationError):
        DraftConfig(node_budget=0, depth_bound=1)
    with pytest.raises(ConfigurationError):
        DraftConfig(node_budget=1, depth_bound=0)
    with pytest.raises(ConfigurationError):
        DraftConfig(node_budget=1, depth_bound=1, branch_factor=0)
    with pytest.raises(ConfigurationError):
        DraftConfig(node_budget=1, depth_bound=1, window=0)


def test_subset_validation():
    with pytest.raises(ConfigurationError):
        build_vocab_subset(np.array([1, 2]), size=0)
    with pytest.raises(ConfigurationError):
        build_vocab_subset(np.array([], dtype=np.int64), size=1)


def test_propose_rejects_empty_context(drafter):
    with pytest.raises(ConfigurationError):
        propose_tree(drafter, np.array([], dtype=np.int64), DraftConfig(4, 2))
