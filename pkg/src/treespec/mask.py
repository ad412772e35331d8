"""Ancestor-only attention masks for tree-shaped speculation.

A verification batch evaluates all tree slots at once against a
committed prefix of length L.  Slot k may attend to the whole valid
prefix and to exactly its own root-to-k path inside the tree: ancestors
plus itself, nothing else.  Cousins and siblings stay mutually
invisible, which is what makes one batched forward equal to evaluating
each root-to-node path on its own branch.

Masks are additive: 0 for visible, the most negative finite value of the
dtype for hidden (see treespec.numerics).  Invalid (padded) slots are
isolated in both directions: their rows and their columns are fully
hidden.  Such rows are not fed to the model, which requires every
evaluated slot to see itself.

build_tree_mask derives visibility from an AncestorTable with vectorized
gathers; brute_force_mask rederives it from nothing but parent walks and
serves as the oracle the fast construction is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .numerics import most_negative
from .tree import AncestorTable, SpecTree, build_ancestor_table

__all__ = ["TreeMask", "build_tree_mask", "brute_force_mask"]


@dataclass
class TreeMask:
    """Additive mask rows for one verification batch.

    rows has shape (slots, prefix_len + slots); column j < prefix_len is
    the committed prefix position j, column prefix_len + k is slot k.
    """

    rows: np.ndarray
    prefix_len: int
    hidden_value: float


def build_tree_mask(
    tree: SpecTree,
    anc: AncestorTable | None = None,
    prefix_len: int = 0,
    dtype=np.float64,
) -> TreeMask:
    """Mask rows from the ancestor table, gather-based.

    Slot k's row allows prefix columns (when k is valid) plus every slot
    that appears in k's ancestor-table column; validity is applied on
    both sides so invalid slots neither see nor are seen.
    """
    if prefix_len < 0:
        raise ConfigurationError(f"prefix_len must be >= 0, got {prefix_len}")
    if anc is None:
        anc = build_ancestor_table(tree)
    slots = tree.slots
    neg = most_negative(np.dtype(dtype))

    allowed = np.zeros((slots, slots), dtype=bool)
    cols = np.arange(slots)
    for level_row in anc.table:
        allowed[cols, level_row] = True
    allowed &= tree.valid[:, None] & tree.valid[None, :]

    rows = np.empty((slots, prefix_len + slots), dtype=dtype)
    rows[:, :prefix_len] = np.where(tree.valid[:, None], 0.0, neg)
    rows[:, prefix_len:] = np.where(allowed, 0.0, neg)
    return TreeMask(rows=rows, prefix_len=prefix_len, hidden_value=neg)


def brute_force_mask(tree: SpecTree, prefix_len: int = 0, dtype=np.float64) -> TreeMask:
    """Oracle construction: visibility by explicit parent walks.

    For every pair (k, j) independently, j is visible to k iff both are
    valid and j lies on k's root-to-k path (walking parent pointers from
    k until the root).  Quadratic and unvectorized on purpose.
    """
    if prefix_len < 0:
        raise ConfigurationError(f"prefix_len must be >= 0, got {prefix_len}")
    slots = tree.slots
    neg = most_negative(np.dtype(dtype))
    rows = np.full((slots, prefix_len + slots), neg, dtype=dtype)
    for k in range(slots):
        if not tree.valid[k]:
            continue
        lineage = set()
        cur = k
        while True:
            lineage.add(cur)
            if cur == 0:
                break
            cur = int(tree.parent[cur])
        rows[k, :prefix_len] = 0.0
        for j in range(slots):
            if tree.valid[j] and j in lineage:
                rows[k, prefix_len + j] = 0.0
    return TreeMask(rows=rows, prefix_len=prefix_len, hidden_value=neg)
