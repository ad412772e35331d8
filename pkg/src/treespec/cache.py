"""Branchable key/value cache for incremental transformer decoding.

The decode loop keeps one committed cache holding the accepted prefix.
Each verification step replicates it into a branch cache, extends the
branch with speculative slots, and, after acceptance, commits the
surviving rows back into a fresh committed cache.  Branches are full
copies: writing to a branch can never disturb the committed prefix or a
sibling branch.

Two commit flavors exist.  `commit_by_length` adopts the first A new
rows of a branch (enough when the branch was extended linearly).
`commit_by_path_indices` gathers an arbitrary row selection, which is
what tree-shaped speculation needs; it has a fast path that keeps the
committed prefix as one contiguous block and only gathers the tail.

`export_layers` / `import_layers` define a backend-neutral layer format;
the *_via_layers commit variants are written purely against that
interface and serve as cross-checks for the direct implementations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CacheFormatError, CommitError

__all__ = [
    "LayerKV",
    "CommittedCache",
    "BranchCache",
    "replicate",
    "seq_length",
    "commit_by_length",
    "commit_by_path_indices",
    "export_layers",
    "import_layers",
    "commit_by_length_via_layers",
    "commit_by_path_indices_via_layers",
]

_INITIAL_CAPACITY = 64


# =============================================================================
# Per-layer storage
# =============================================================================


class LayerKV:
    """Growable per-layer store of key and value rows, one row per position.

    Rows are appended in position order and never mutated afterwards.
    Buffers over-allocate (doubling) so appends are amortized O(row).
    """

    __slots__ = ("_keys", "_values", "length")

    def __init__(self, dim: int, dtype: np.dtype, capacity: int = _INITIAL_CAPACITY):
        self._keys = np.empty((capacity, dim), dtype=dtype)
        self._values = np.empty((capacity, dim), dtype=dtype)
        self.length = 0

    @property
    def dim(self) -> int:
        return self._keys.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self._keys.dtype

    def append(self, k_rows: np.ndarray, v_rows: np.ndarray) -> None:
        """Append key/value rows, shape (n, dim) each."""
        n = k_rows.shape[0]
        need = self.length + n
        if need > self._keys.shape[0]:
            cap = max(need, 2 * self._keys.shape[0])
            self._keys = np.concatenate([self._keys[: self.length], np.empty((cap - self.length, self.dim), self.dtype)])
            self._values = np.concatenate([self._values[: self.length], np.empty((cap - self.length, self.dim), self.dtype)])
        self._keys[self.length : need] = k_rows
        self._values[self.length : need] = v_rows
        self.length = need

    def view(self) -> tuple[np.ndarray, np.ndarray]:
        """Read-only-by-convention views of the used region, shape (length, dim)."""
        return self._keys[: self.length], self._values[: self.length]

    def copy(self) -> "LayerKV":
        """Compact deep copy of the used region."""
        out = LayerKV(self.dim, self.dtype, capacity=max(self.length, _INITIAL_CAPACITY))
        out._keys[: self.length] = self._keys[: self.length]
        out._values[: self.length] = self._values[: self.length]
        out.length = self.length
        return out

    @staticmethod
    def from_rows(keys: np.ndarray, values: np.ndarray) -> "LayerKV":
        out = LayerKV(keys.shape[1], keys.dtype, capacity=max(keys.shape[0], _INITIAL_CAPACITY))
        out.append(keys, values)
        return out


# =============================================================================
# Cache objects
# =============================================================================


@dataclass
class CommittedCache:
    """The accepted prefix: one LayerKV per transformer layer.

    Committed caches are treated as immutable between commits; commits
    build a new object rather than updating in place, so a reference
    held by a test or a trace hook stays valid.
    """

    layers: list[LayerKV] = field(default_factory=list)

    @staticmethod
    def empty(num_layers: int, dim: int, dtype: np.dtype) -> "CommittedCache":
        return CommittedCache([LayerKV(dim, np.dtype(dtype)) for _ in range(num_layers)])

    @property
    def seq_len(self) -> int:
        return self.layers[0].length if self.layers else 0


@dataclass
class BranchCache:
    """A full-copy replica of a committed cache, extended by speculative rows.

    base_len records the committed length at replication time; rows past
    it are the branch's own speculative slots.
    """

    layers: list[LayerKV]
    base_len: int

    @property
    def seq_len(self) -> int:
        return self.layers[0].length if self.layers else 0


def seq_length(cache: CommittedCache | BranchCache) -> int:
    """Number of positions stored (equal across layers by construction)."""
    return cache.seq_len


def replicate(committed: CommittedCache) -> BranchCache:
    """Full-copy branch of a committed cache.

    The copy shares no buffers with the original, so extending or
    discarding the branch leaves the committed cache bit-identical.
    """
    return BranchCache([layer.copy() for layer in committed.layers], committed.seq_len)


# =============================================================================
# Commits
# =============================================================================


def _check_same_family(committed: CommittedCache, branch: BranchCache) -> None:
    if len(committed.layers) != len(branch.layers):
        raise CommitError(
            f"layer count mismatch: committed has {len(committed.layers)}, branch has {len(branch.layers)}"
        )
    if branch.base_len != committed.seq_len:
        raise CommitError(
            f"branch base_len {branch.base_len} does not match committed length {committed.seq_len}"
        )


def commit_by_length(committed: CommittedCache, branch: BranchCache, accepted: int) -> CommittedCache:
    """Adopt the first `accepted` new rows of a linearly extended branch.

    Returns a new committed cache of length base_len + accepted whose
    prefix rows come from `committed` and whose tail rows are the
    branch's first `accepted` speculative slots.  accepted = 0 yields a
    copy equal to the original committed cache.
    """
    _check_same_family(committed, branch)
    if accepted < 0 or branch.base_len + accepted > branch.seq_len:
        raise CommitError(
            f"cannot adopt {accepted} rows: branch holds {branch.seq_len - branch.base_len} new slots"
        )
    base = branch.base_len
    new_layers = []
    for com_layer, br_layer in zip(committed.layers, branch.layers):
        ck, cv = com_layer.view()
        bk, bv = br_layer.view()
        layer = LayerKV(com_layer.dim, com_layer.dtype, capacity=max(base + accepted, _INITIAL_CAPACITY))
        layer.append(ck, cv)
        layer.append(bk[base : base + accepted], bv[base : base + accepted])
        new_layers.append(layer)
    return CommittedCache(new_layers)


def commit_by_path_indices(
    committed: CommittedCache,
    branch: BranchCache,
    path_indices: np.ndarray,
    fast_reorder: bool = True,
) -> tuple[CommittedCache, bool]:
    """Gather branch rows at `path_indices` into a new committed cache.

    Args:
        committed: the cache the branch was replicated from.
        branch: the verified branch holding prefix + speculative rows.
        path_indices: absolute row indices into the branch, in the order
            they should appear in the new committed cache.
        fast_reorder: allow the prefix-sharing fast path, which copies
            the committed prefix as one contiguous block and gathers only
            the tail.  Any layout that is not prefix-preserving, and any
            inconsistency detected along the way, falls back to the full
            gather.

    Returns:
        (new committed cache, fast_path_used).  The result is bit-identical
        between the two paths; the flag only reports which one ran, so
        callers can record fallbacks.
    """
    _check_same_family(committed, branch)
    idx = np.asarray(path_indices, dtype=np.int64)
    if idx.ndim != 1:
        raise CommitError(f"path indices must be one-dimensional, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= branch.seq_len):
        raise CommitError(
            f"path index out of range: branch holds rows [0, {branch.seq_len}), got "
            f"[{idx.min()}, {idx.max()}]"
        )

    base = branch.base_len
    fast_ok = (
        fast_reorder
        and idx.size >= base
        and base <= branch.seq_len
        and bool(np.array_equal(idx[:base], np.arange(base, dtype=np.int64)))
    )

    new_layers = []
    for br_layer in branch.layers:
        bk, bv = br_layer.view()
        layer = LayerKV(br_layer.dim, br_layer.dtype, capacity=max(idx.size, _INITIAL_CAPACITY))
        if fast_ok:
            tail = idx[base:]
            layer.append(bk[:base], bv[:base])
            layer.append(bk[tail], bv[tail])
        else:
            layer.append(bk[idx], bv[idx])
        new_layers.append(layer)
    return CommittedCache(new_layers), fast_ok


# =============================================================================
# Layer export/import and the interface-only commit variants
# =============================================================================


def export_layers(cache: CommittedCache | BranchCache) -> list[tuple[np.ndarray, np.ndarray]]:
    """Copy out the cache as a layer-ordered list of (keys, values) matrices."""
    out = []
    for layer in cache.layers:
        k, v = layer.view()
        out.append((k.copy(), v.copy()))
    return out


def import_layers(mats: list[tuple[np.ndarray, np.ndarray]]) -> CommittedCache:
    """Rebuild a committed cache from exported layer matrices.

    Raises CacheFormatError if layers disagree on length, width, or if a
    keys/values pair is mismatched.
    """
    lengths = set()
    for i, (k, v) in enumerate(mats):
        if k.shape != v.shape:
            raise CacheFormatError(f"layer {i}: keys shape {k.shape} != values shape {v.shape}")
        if k.ndim != 2:
            raise CacheFormatError(f"layer {i}: expected 2-d matrices, got {k.ndim}-d")
        lengths.add(k.shape[0])
    if len(lengths) > 1:
        raise CacheFormatError(f"ragged layers: lengths {sorted(lengths)}")
    return CommittedCache([LayerKV.from_rows(k, v) for k, v in mats])


def commit_by_length_via_layers(
    committed: CommittedCache, branch: BranchCache, accepted: int
) -> CommittedCache:
    """Reference commit built only on export/import; must match commit_by_length."""
    _check_same_family(committed, branch)
    if accepted < 0 or branch.base_len + accepted > branch.seq_len:
        raise CommitError(
            f"cannot adopt {accepted} rows: branch holds {branch.seq_len - branch.base_len} new slots"
        )
    base = branch.base_len
    com_mats = export_layers(committed)
    br_mats = export_layers(branch)
    merged = [
        (
            np.concatenate([ck, bk[base : base + accepted]]),
            np.concatenate([cv, bv[base : base + accepted]]),
        )
        for (ck, cv), (bk, bv) in zip(com_mats, br_mats)
    ]
    return import_layers(merged)


def commit_by_path_indices_via_layers(
    committed: CommittedCache, branch: BranchCache, path_indices: np.ndarray
) -> CommittedCache:
    """Reference gather commit built only on export/import."""
    _check_same_family(committed, branch)
    idx = np.asarray(path_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= branch.seq_len):
        raise CommitError(
            f"path index out of range: branch holds rows [0, {branch.seq_len}), got "
            f"[{idx.min()}, {idx.max()}]"
        )
    gathered = [(k[idx], v[idx]) for k, v in export_layers(branch)]
    return import_layers(gathered)
