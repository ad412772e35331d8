"""Speculation trees as flat integer arrays with a dummy root.

A proposed tree of M nodes is stored in M+1 slots.  Slot 0 is the root:
it carries the pending token whose verification this tree extends, at
depth 0.  Slots 1..M are the drafted nodes in breadth-first order
(parents always precede children).  parent[0] = 0, so every entry of the
parent array is a valid slot index; downstream gathers never meet a
negative sentinel and need no branching.

The ancestor table generalizes the parent array: row l holds the l-th
ancestor of every slot, computed by repeatedly gathering the parent
array into itself, saturating at the root.  It is the only structure the
attention-mask builder needs, and its construction cost is exactly
max_depth * (M+1) parent lookups.

Padding (for batched unit tests) marks slots invalid with parent 0 and
depth 0; validity is closed under parenthood so a valid node can never
hang below a padded one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, TreeStructureError

__all__ = [
    "SpecTree",
    "AncestorTable",
    "PaddedTreeBatch",
    "linearize",
    "build_ancestor_table",
    "validate_tree",
    "pad_batch",
    "path_to_node",
    "accepted_path_indices",
    "child_table",
    "with_root_token",
]


# =============================================================================
# Types
# =============================================================================


@dataclass
class SpecTree:
    """One speculation tree in slot form; treated as immutable once built.

    Arrays all have length node_count + 1 (the extra slot is the root).
    tokens[0] is the pending root token; linearize leaves it 0 and the
    decode loop fills it via with_root_token.
    """

    parent: np.ndarray  # int64, parent[0] == 0
    depth: np.ndarray  # int64, depth[0] == 0
    tokens: np.ndarray  # int64
    valid: np.ndarray  # bool

    def __post_init__(self):
        n = self.parent.shape[0]
        for name in ("depth", "tokens", "valid"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ConfigurationError(
                    f"tree arrays disagree: parent has {n} slots, {name} has shape {arr.shape}"
                )
        if n < 1:
            raise ConfigurationError("a tree has at least the root slot")

    @property
    def node_count(self) -> int:
        """Number of drafted nodes (excludes the root slot)."""
        return self.parent.shape[0] - 1

    @property
    def slots(self) -> int:
        return self.parent.shape[0]


@dataclass
class AncestorTable:
    """Rows of l-th ancestors per slot; see build_ancestor_table.

    lookups records how many parent-array reads the construction made,
    so tests can pin the cost bound.
    """

    table: np.ndarray  # int64, shape (max_depth + 1, slots)
    lookups: int


@dataclass
class PaddedTreeBatch:
    """Several trees padded to a common slot count (unit-test helper)."""

    parent: np.ndarray  # (batch, max_slots)
    depth: np.ndarray
    tokens: np.ndarray
    valid: np.ndarray
    max_nodes: int


# =============================================================================
# Construction
# =============================================================================


def linearize(edges: list[tuple[int, int]], root_token: int = 0) -> SpecTree:
    """Build slot arrays from drafted edges.

    Args:
        edges: (parent_ref, token) pairs in draft order.  parent_ref is
            the insertion index of the parent edge (1-based), or 0 for
            the root; it must reference the root or an earlier edge.
        root_token: placeholder for slot 0 (the decode loop overwrites it).

    Returns:
        A SpecTree whose nodes are renumbered breadth-first: level by
        level, stable in insertion order within a level.  Parents always
        receive smaller slot ids than their children.
    """
    m = len(edges)
    ins_parent = np.zeros(m + 1, dtype=np.int64)
    ins_depth = np.zeros(m + 1, dtype=np.int64)
    for i, (ref, _tok) in enumerate(edges, start=1):
        if not 0 <= ref < i:
            raise TreeStructureError(
                "ordering", i, f"edge {i} references parent {ref}, which is not an earlier edge"
            )
        ins_parent[i] = ref
        ins_depth[i] = ins_depth[ref] + 1

    order = sorted(range(1, m + 1), key=lambda i: (ins_depth[i], i))
    slot_of = np.zeros(m + 1, dtype=np.int64)
    for slot, ins in enumerate(order, start=1):
        slot_of[ins] = slot

    parent = np.zeros(m + 1, dtype=np.int64)
    depth = np.zeros(m + 1, dtype=np.int64)
    tokens = np.zeros(m + 1, dtype=np.int64)
    tokens[0] = root_token
    for ins, (ref, tok) in enumerate(edges, start=1):
        slot = slot_of[ins]
        parent[slot] = slot_of[ref]
        depth[slot] = ins_depth[ins]
        tokens[slot] = tok
    return SpecTree(parent=parent, depth=depth, tokens=tokens, valid=np.ones(m + 1, dtype=bool))


def with_root_token(tree: SpecTree, token: int) -> SpecTree:
    """Copy of the tree with slot 0 carrying the given pending token."""
    tokens = tree.tokens.copy()
    tokens[0] = token
    return replace(tree, tokens=tokens)


def build_ancestor_table(tree: SpecTree) -> AncestorTable:
    """Ancestor rows by the shifted-parent recurrence.

    Row 0 is the identity (every slot is its own 0-th ancestor); row l+1
    is the parent array gathered at row l.  Entries saturate at the root
    once a lineage is exhausted.  Exactly max_depth * slots parent
    lookups are performed.
    """
    slots = tree.slots
    max_depth = int(tree.depth.max()) if slots else 0
    table = np.empty((max_depth + 1, slots), dtype=np.int64)
    table[0] = np.arange(slots, dtype=np.int64)
    lookups = 0
    for level in range(max_depth):
        table[level + 1] = tree.parent[table[level]]
        lookups += slots
    return AncestorTable(table=table, lookups=lookups)


# =============================================================================
# Validation
# =============================================================================


def validate_tree(tree: SpecTree) -> None:
    """Check all structural invariants; raise TreeStructureError on the
    first violation (scanning slots in ascending order).

    Checks per slot, in order: parent index range, acyclicity (repeated
    parent application must reach the root), depth consistency
    (depth[parent] == depth - 1), id ordering (parents before children),
    and validity closure (a valid node's parent is valid).
    """
    parent, depth, valid = tree.parent, tree.depth, tree.valid
    m = tree.node_count

    if parent[0] != 0:
        raise TreeStructureError("range", 0, f"root parent must be 0, got {parent[0]}")
    if depth[0] != 0:
        raise TreeStructureError("depth_inconsistency", 0, f"root depth must be 0, got {depth[0]}")
    if not valid[0]:
        raise TreeStructureError("validity_closure", 0, "root slot must be valid")

    bad = np.nonzero((parent < 0) | (parent > m))[0]
    if bad.size:
        k = int(bad[0])
        raise TreeStructureError("range", k, f"parent {parent[k]} outside [0, {m}]")

    for k in range(1, m + 1):
        cur = int(parent[k])
        steps = 1
        while cur != 0 and steps <= m + 1:
            cur = int(parent[cur])
            steps += 1
        if cur != 0:
            raise TreeStructureError("cycle", k, "repeated parent application never reaches the root")
        if depth[k] < 1 or depth[int(parent[k])] != depth[k] - 1:
            raise TreeStructureError(
                "depth_inconsistency",
                k,
                f"depth {depth[k]} with parent depth {depth[int(parent[k])]}",
            )
        if parent[k] >= k:
            raise TreeStructureError(
                "ordering", k, f"parent {parent[k]} does not precede node {k}"
            )
        if valid[k] and not valid[int(parent[k])]:
            raise TreeStructureError(
                "validity_closure", k, f"valid node hangs below invalid parent {parent[k]}"
            )


# =============================================================================
# Derived structures
# =============================================================================


def child_table(tree: SpecTree) -> list[list[int]]:
    """children[k] = slot ids of k's children, ascending."""
    children: list[list[int]] = [[] for _ in range(tree.slots)]
    for k in range(1, tree.slots):
        children[int(tree.parent[k])].append(k)
    return children


def path_to_node(tree: SpecTree, node: int) -> np.ndarray:
    """Tokens along the root-to-node path, excluding the root token.

    Length equals depth[node]; node 0 yields an empty array.
    """
    if not 0 <= node < tree.slots:
        raise ConfigurationError(f"node {node} outside [0, {tree.node_count}]")
    rev = []
    cur = node
    while cur != 0:
        rev.append(int(tree.tokens[cur]))
        cur = int(tree.parent[cur])
    return np.array(rev[::-1], dtype=np.int64)


def accepted_path_indices(tree: SpecTree, chain: list[int], prefix_len: int) -> np.ndarray:
    """Branch row indices that survive acceptance, in new-cache order.

    The layout assumed is: rows [0, prefix_len) are the committed
    prefix, row prefix_len + k is speculative slot k.  The result keeps
    the whole prefix, then the root slot, then the accepted chain.

    Args:
        chain: accepted slot ids, a root-descending chain (chain[0] is a
            child of the root, each later element a child of the previous).
        prefix_len: committed prefix length at verification time.

    Raises:
        TreeStructureError(depth_inconsistency) if the chain does not
        descend from the root, or touches an invalid slot.
    """
    prev = 0
    for k in chain:
        if not 1 <= k <= tree.node_count:
            raise TreeStructureError("range", int(k), f"chain slot {k} outside [1, {tree.node_count}]")
        if not tree.valid[k]:
            raise TreeStructureError("validity_closure", int(k), "chain crosses an invalid slot")
        if int(tree.parent[k]) != prev:
            raise TreeStructureError(
                "depth_inconsistency",
                int(k),
                f"chain slot {k} has parent {tree.parent[k]}, expected {prev}",
            )
        prev = int(k)
    head = np.arange(prefix_len, dtype=np.int64)
    picked = np.array([0] + list(chain), dtype=np.int64) + prefix_len
    return np.concatenate([head, picked])


def pad_batch(trees: list[SpecTree], pad_token: int = 0) -> PaddedTreeBatch:
    """Stack trees into rectangular arrays for batched unit tests.

    Padded slots get parent 0, depth 0, the pad token, and valid False,
    so a padded slot is indexable but invisible under the mask rules.
    """
    if not trees:
        raise ConfigurationError("pad_batch needs at least one tree")
    max_nodes = max(t.node_count for t in trees)
    batch = len(trees)
    width = max_nodes + 1
    parent = np.zeros((batch, width), dtype=np.int64)
    depth = np.zeros((batch, width), dtype=np.int64)
    tokens = np.full((batch, width), pad_token, dtype=np.int64)
    valid = np.zeros((batch, width), dtype=bool)
    for b, t in enumerate(trees):
        s = t.slots
        parent[b, :s] = t.parent
        depth[b, :s] = t.depth
        tokens[b, :s] = t.tokens
        valid[b, :s] = t.valid
    return PaddedTreeBatch(parent=parent, depth=depth, tokens=tokens, valid=valid, max_nodes=max_nodes)
