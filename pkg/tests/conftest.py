"""Shared fixtures and generators for the test suite.

The teacher is the default benchmark model; the drafter shares its seed
and dimensions but keeps only the first layer, so its parameter tensors
are a prefix of the teacher's and its greedy proposals agree with the
teacher often enough for acceptance statistics to be interesting.

random_tree produces structurally valid trees in random topological
(not necessarily breadth-first) slot order, which is the harder layout
for mask and validation code.  mutate_tree breaks exactly one invariant
and returns the kind validate_tree must report.
"""

import numpy as np
import pytest

from treespec.model import ModelConfig, init_model
from treespec.tree import SpecTree

TEACHER_CONFIG = ModelConfig(
    vocab_size=64, embed_dim=16, num_layers=2, num_heads=2, ffn_dim=64, seed=7
)
DRAFTER_CONFIG = ModelConfig(
    vocab_size=64, embed_dim=16, num_layers=1, num_heads=2, ffn_dim=64, seed=7
)


@pytest.fixture(scope="session")
def teacher():
    return init_model(TEACHER_CONFIG)


@pytest.fixture(scope="session")
def drafter():
    return init_model(DRAFTER_CONFIG)


# =============================================================================
# Random structures
# =============================================================================


def random_tree(rng, max_nodes=12, max_depth=6, vocab=64, invalid_fraction=0.0):
    """Structurally valid random tree in random topological slot order.

    Each node's parent is drawn uniformly from the earlier slots still
    below the depth bound.  With invalid_fraction > 0, that fraction of
    draws invalidates a random subtree (keeping validity closed).
    """
    m = int(rng.integers(1, max_nodes + 1))
    parent = np.zeros(m + 1, dtype=np.int64)
    depth = np.zeros(m + 1, dtype=np.int64)
    for k in range(1, m + 1):
        eligible = np.nonzero(depth[:k] < max_depth)[0]
        p = int(rng.choice(eligible))
        parent[k] = p
        depth[k] = depth[p] + 1
    tokens = rng.integers(0, vocab, m + 1).astype(np.int64)
    valid = np.ones(m + 1, dtype=bool)
    if invalid_fraction > 0 and rng.random() < invalid_fraction:
        head = int(rng.integers(1, m + 1))
        for k in range(1, m + 1):
            cur = k
            while cur not in (0, head):
                cur = int(parent[cur])
            if cur == head:
                valid[k] = False
    return SpecTree(parent=parent, depth=depth, tokens=tokens, valid=valid)


def _copy_tree(tree):
    return SpecTree(
        parent=tree.parent.copy(),
        depth=tree.depth.copy(),
        tokens=tree.tokens.copy(),
        valid=tree.valid.copy(),
    )


def _ancestors(tree, node):
    seen = set()
    cur = int(tree.parent[node])
    while cur != 0:
        seen.add(cur)
        cur = int(tree.parent[cur])
    return seen


def mutate_tree(tree, kind, rng):
    """Break one invariant of a valid tree; None if this tree cannot host it.

    The returned tree must make validate_tree raise with exactly `kind`:

      range: a parent index outside [0, node_count]
      cycle: a parent pointer into the node's own subtree (or itself)
      depth_inconsistency: a stored depth off by one or more
      ordering: an acyclic, depth-consistent parent with a larger slot id
      validity_closure: a valid node hanging below an invalidated one
    """
    t = _copy_tree(tree)
    m = t.node_count

    if kind == "range":
        k = int(rng.integers(1, m + 1))
        t.parent[k] = m + 1 + int(rng.integers(0, 4)) if rng.random() < 0.5 else -1
        return t

    if kind == "cycle":
        deep = [d for d in range(1, m + 1) if int(t.parent[d]) >= 1]
        if deep and rng.random() < 0.7:
            d = int(rng.choice(deep))
            t.parent[int(t.parent[d])] = d  # two-cycle between parent and child
        else:
            k = int(rng.integers(1, m + 1))
            t.parent[k] = k
        return t

    if kind == "depth_inconsistency":
        k = int(rng.integers(1, m + 1))
        t.depth[k] += int(rng.integers(1, 3)) if rng.random() < 0.5 else -int(t.depth[k])
        return t

    if kind == "ordering":
        # Needs parent[k] = j with j > k, depth[j] == depth[k] - 1 and k not
        # an ancestor of j: the walk stays acyclic and depths consistent, so
        # only the slot-ordering invariant breaks.  Random topological trees
        # usually contain such a pair; the caller retries when none exists.
        pairs = [
            (k, j)
            for k in range(1, m + 1)
            for j in range(k + 1, m + 1)
            if t.depth[j] == t.depth[k] - 1 and k not in _ancestors(t, j)
        ]
        if not pairs:
            return None
        k, j = pairs[int(rng.integers(0, len(pairs)))]
        t.parent[k] = j
        return t

    if kind == "validity_closure":
        parents = sorted({int(t.parent[k]) for k in range(1, m + 1) if t.parent[k] >= 1})
        if parents:
            t.valid[int(rng.choice(parents))] = False
        else:
            t.valid[0] = False  # star tree: break the root instead
        return t

    raise ValueError(f"unknown mutation kind {kind!r}")
