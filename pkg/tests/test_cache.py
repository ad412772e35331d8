"""Branchable KV caches: replication isolation, commits, export round-trips."""

import numpy as np
import pytest

from treespec.cache import (
    BranchCache,
    CommittedCache,
    LayerKV,
    commit_by_length,
    commit_by_length_via_layers,
    commit_by_path_indices,
    commit_by_path_indices_via_layers,
    export_layers,
    import_layers,
    replicate,
)
from treespec.errors import CacheFormatError, CommitError

DIM = 6


def _filled_cache(rng, num_layers=2, length=5, dim=DIM):
    cache = CommittedCache.empty(num_layers, dim, np.float64)
    for layer in cache.layers:
        layer.append(rng.standard_normal((length, dim)), rng.standard_normal((length, dim)))
    return cache


def _extend(branch, rng, rows):
    for layer in branch.layers:
        layer.append(rng.standard_normal((rows, DIM)), rng.standard_normal((rows, DIM)))


def _caches_equal(a, b):
    if len(a.layers) != len(b.layers):
        return False
    for la, lb in zip(a.layers, b.layers):
        ka, va = la.view()
        kb, vb = lb.view()
        if not (np.array_equal(ka, kb) and np.array_equal(va, vb)):
            return False
    return True


# =============================================================================
# LayerKV growth
# =============================================================================


def test_layer_grows_past_initial_capacity():
    rng = np.random.default_rng(31)
    layer = LayerKV(DIM, np.dtype(np.float64), capacity=2)
    rows_k, rows_v = [], []
    for _ in range(40):
        k = rng.standard_normal((1, DIM))
        v = rng.standard_normal((1, DIM))
        layer.append(k, v)
        rows_k.append(k)
        rows_v.append(v)
    keys, values = layer.view()
    assert np.array_equal(keys, np.concatenate(rows_k))
    assert np.array_equal(values, np.concatenate(rows_v))
    assert layer.length == 40


def test_view_reflects_only_appended_rows():
    layer = LayerKV(DIM, np.dtype(np.float64))
    assert layer.view()[0].shape == (0, DIM)
    layer.append(np.ones((2, DIM)), np.zeros((2, DIM)))
    assert layer.view()[0].shape == (2, DIM)


# =============================================================================
# Replication isolation
# =============================================================================


def test_replicate_is_isolated_both_ways():
    rng = np.random.default_rng(32)
    committed = _filled_cache(rng)
    before = export_layers(committed)
    branch = replicate(committed)
    assert branch.base_len == committed.seq_len

    _extend(branch, rng, 3)
    after = export_layers(committed)
    for (k0, v0), (k1, v1) in zip(before, after):
        assert np.array_equal(k0, k1) and np.array_equal(v0, v1), (
            "extending a branch must not touch the committed cache"
        )
    assert branch.seq_len == committed.seq_len + 3


def test_replicate_copies_rather_than_aliases():
    rng = np.random.default_rng(33)
    committed = _filled_cache(rng)
    branch = replicate(committed)
    branch.layers[0].view()[0][0, 0] += 1.0
    assert committed.layers[0].view()[0][0, 0] != branch.layers[0].view()[0][0, 0]


# =============================================================================
# Length commits
# =============================================================================


def test_commit_by_length_takes_prefix_of_new_rows():
    rng = np.random.default_rng(34)
    committed = _filled_cache(rng, length=4)
    branch = replicate(committed)
    _extend(branch, rng, 3)

    out = commit_by_length(committed, branch, 2)
    assert out.seq_len == 6
    for com_layer, br_layer, out_layer in zip(committed.layers, branch.layers, out.layers):
        ck, cv = com_layer.view()
        bk, bv = br_layer.view()
        ok, ov = out_layer.view()
        assert np.array_equal(ok[:4], ck) and np.array_equal(ov[:4], cv)
        assert np.array_equal(ok[4:], bk[4:6]) and np.array_equal(ov[4:], bv[4:6])


def test_commit_by_length_zero_copies_committed():
    rng = np.random.default_rng(35)
    committed = _filled_cache(rng)
    branch = replicate(committed)
    _extend(branch, rng, 2)
    out = commit_by_length(committed, branch, 0)
    assert _caches_equal(out, committed)


def test_commit_by_length_bounds():
    rng = np.random.default_rng(36)
    committed = _filled_cache(rng)
    branch = replicate(committed)
    _extend(branch, rng, 2)
    with pytest.raises(CommitError):
        commit_by_length(committed, branch, 3)
    with pytest.raises(CommitError):
        commit_by_length(committed, branch, -1)


def test_commit_rejects_foreign_branch():
    rng = np.random.default_rng(37)
    committed = _filled_cache(rng, length=4)
    stale = replicate(_filled_cache(rng, length=6))
    with pytest.raises(CommitError):
        commit_by_length(committed, stale, 1)
    thin = BranchCache([layer.copy() for layer in committed.layers[:1]], committed.seq_len)
    with pytest.raises(CommitError):
        commit_by_length(committed, thin, 0)


# =============================================================================
# Path commits
# =============================================================================


def test_commit_by_path_gather_example():
    rng = np.random.default_rng(38)
    committed = _filled_cache(rng, length=3)
    branch = replicate(committed)
    _extend(branch, rng, 4)  # rows 3..6 are speculative slots 0..3

    idx = np.array([0, 1, 2, 3, 5])  # prefix + root slot + slot 2
    out, fast = commit_by_path_indices(committed, branch, idx)
    assert fast is True
    assert out.seq_len == 5
    for br_layer, out_layer in zip(branch.layers, out.layers):
        bk, bv = br_layer.view()
        ok, ov = out_layer.view()
        assert np.array_equal(ok, bk[idx]) and np.array_equal(ov, bv[idx])


def test_fast_and_slow_paths_bit_identical():
    rng = np.random.default_rng(39)
    for _ in range(30):
        committed = _filled_cache(rng, length=int(rng.integers(1, 8)))
        branch = replicate(committed)
        new = int(rng.integers(1, 6))
        _extend(branch, rng, new)
        base = branch.base_len
        picked = np.sort(rng.choice(new, size=int(rng.integers(1, new + 1)), replace=False))
        idx = np.concatenate([np.arange(base), base + picked])

        fast_out, fast_used = commit_by_path_indices(committed, branch, idx, fast_reorder=True)
        slow_out, slow_used = commit_by_path_indices(committed, branch, idx, fast_reorder=False)
        assert fast_used is True and slow_used is False
        assert _caches_equal(fast_out, slow_out)


def test_non_prefix_layout_falls_back():
    rng = np.random.default_rng(40)
    committed = _filled_cache(rng, length=4)
    branch = replicate(committed)
    _extend(branch, rng, 2)
    # Dropping a prefix row makes the layout non-prefix-preserving.
    idx = np.array([0, 2, 3, 4])
    out, fast_used = commit_by_path_indices(committed, branch, idx, fast_reorder=True)
    assert fast_used is False
    ref = commit_by_path_indices_via_layers(committed, branch, idx)
    assert _caches_equal(out, ref)


def test_commit_by_path_bounds():
    rng = np.random.default_rng(41)
    committed = _filled_cache(rng, length=2)
    branch = replicate(committed)
    _extend(branch, rng, 1)
    with pytest.raises(CommitError):
        commit_by_path_indices(committed, branch, np.array([0, 3]))
    with pytest.raises(CommitError):
        commit_by_path_indices(committed, branch, np.array([-1]))
    with pytest.raises(CommitError):
        commit_by_path_indices(committed, branch, np.array([[0, 1]]))


# =============================================================================
# Export / import and the interface-only commit variants
# =============================================================================


def test_export_import_round_trip():
    rng = np.random.default_rng(42)
    committed = _filled_cache(rng, num_layers=3, length=7)
    rebuilt = import_layers(export_layers(committed))
    assert _caches_equal(committed, rebuilt)
    assert rebuilt.seq_len == 7


def test_export_returns_copies():
    rng = np.random.default_rng(43)
    committed = _filled_cache(rng)
    mats = export_layers(committed)
    mats[0][0][0, 0] += 5.0
    assert committed.layers[0].view()[0][0, 0] != mats[0][0][0, 0]


def test_import_rejects_malformed_layers():
    good = np.zeros((3, DIM))
    with pytest.raises(CacheFormatError):
        import_layers([(good, np.zeros((2, DIM)))])
    with pytest.raises(CacheFormatError):
        import_layers([(good, good), (np.zeros((4, DIM)), np.zeros((4, DIM)))])
    with pytest.raises(CacheFormatError):
        import_layers([(np.zeros(3), np.zeros(3))])


def test_via_layers_commits_match_native():
    rng = np.random.default_rng(44)
    for _ in range(20):
        committed = _filled_cache(rng, length=int(rng.integers(1, 6)))
        branch = replicate(committed)
        new = int(rng.integers(1, 5))
        _extend(branch, rng, new)

        accepted = int(rng.integers(0, new + 1))
        assert _caches_equal(
            commit_by_length(committed, branch, accepted),
            commit_by_length_via_layers(committed, branch, accepted),
        )

        idx = rng.choice(branch.seq_len, size=int(rng.integers(1, branch.seq_len + 1)), replace=False)
        native, _ = commit_by_path_indices(committed, branch, idx)
        assert _caches_equal(native, commit_by_path_indices_via_layers(committed, branch, idx))
