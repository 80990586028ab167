"""Tests for the radix prefix cache."""

import pytest

from src.kv_cache import (
    DeadHandleError,
    DoubleReleaseError,
    NotAnExtensionError,
    RadixCache,
)


def _seq(cache, tokens):
    return cache.append(cache.new_handle(), tokens)


def test_append_consumes_handle(cache):
    empty = cache.new_handle()
    handle = cache.append(empty, [1, 2, 3])

    assert cache.materialize(handle) == [1, 2, 3]
    assert not empty.alive
    stats = cache.stats()
    assert (stats.nodes, stats.physical_tokens, stats.live_handles) == (1, 3, 1)


def test_append_extends_unshared_tail_in_place(cache):
    handle = _seq(cache, [1, 2, 3])
    handle = cache.append(handle, [4])

    assert cache.materialize(handle) == [1, 2, 3, 4]
    assert cache.stats().nodes == 1


def test_append_empty_returns_same_handle(cache):
    handle = _seq(cache, [1])
    assert cache.append(handle, []) is handle
    assert handle.alive


def test_fork_is_zero_copy(cache):
    prompt = list(range(512))
    handle = _seq(cache, prompt)
    ops_before = cache.op_count

    branches = cache.fork(handle, 8)

    stats = cache.stats()
    assert stats.physical_tokens == 512
    assert stats.live_handles == 9
    # one node reference per branch, independent of prompt length
    assert cache.op_count - ops_before == 8
    assert all(cache.materialize(b) == prompt for b in branches)


def test_fork_branches_grow_independently(cache):
    handle = _seq(cache, list(range(512)))
    branches = cache.fork(handle, 8)
    extended = [cache.append(b, [1000 + i]) for i, b in enumerate(branches)]

    assert cache.stats().physical_tokens == 520
    assert cache.materialize(extended[3])[-1] == 1003
    assert cache.materialize(handle) == list(range(512))
    assert cache.check_invariants() == []


def test_fork_requires_positive_count(cache):
    with pytest.raises(ValueError):
        cache.fork(_seq(cache, [1]), 0)


def test_join_merge_adds_no_tokens(cache):
    prompt = list(range(512))
    shared = _seq(cache, prompt)
    left, right = cache.fork(shared, 2)
    left = cache.append(left, [7, 8])
    right = cache.append(right, [9])
    before = cache.stats().physical_tokens

    joined = cache.join_merge([left, right], shared)

    assert cache.materialize(joined) == prompt + [7, 8, 9]
    assert cache.stats().physical_tokens == before
    assert joined.logical_length == 515
    assert joined.segment_offsets() == [(0, 514), (514, 1)]
    assert cache.check_invariants() == []


def test_join_merge_rejects_non_extension(cache):
    shared = _seq(cache, [1, 2])
    other = _seq(cache, [9])

    with pytest.raises(NotAnExtensionError) as excinfo:
        cache.join_merge([other], shared)
    assert excinfo.value.code == "NotAnExtension"


def test_prefix_splits_node(cache):
    handle = _seq(cache, [1, 2, 3, 4])
    head = cache.prefix(handle, 2)

    assert cache.materialize(head) == [1, 2]
    assert cache.materialize(handle) == [1, 2, 3, 4]
    stats = cache.stats()
    assert (stats.nodes, stats.physical_tokens) == (2, 4)
    assert cache.check_invariants() == []


def test_prefix_rejects_out_of_range_length(cache):
    handle = _seq(cache, [1, 2])
    with pytest.raises(ValueError, match="outside"):
        cache.prefix(handle, 3)


def test_shared_leading_tokens_are_stored_once(cache):
    first = _seq(cache, [1, 2, 3])
    second = _seq(cache, [1, 2, 9])

    assert cache.materialize(first) == [1, 2, 3]
    assert cache.materialize(second) == [1, 2, 9]
    assert cache.stats().physical_tokens == 4
    assert cache.check_invariants() == []


def test_release_twice_raises(cache):
    handle = _seq(cache, [1])
    cache.release(handle)
    with pytest.raises(DoubleReleaseError):
        cache.release(handle)


def test_dead_handle_is_rejected(cache):
    handle = _seq(cache, [1])
    cache.release(handle)
    with pytest.raises(DeadHandleError):
        cache.materialize(handle)
    with pytest.raises(DeadHandleError):
        cache.fork(handle, 1)


def test_release_reclaims_unreferenced_nodes(cache):
    base = _seq(cache, [1, 2, 3])
    branch = cache.append(cache.fork(base, 1)[0], [4])

    cache.release(base)
    assert cache.stats().nodes == 2

    cache.release(branch)
    stats = cache.stats()
    assert (stats.nodes, stats.physical_tokens, stats.live_handles) == (0, 0, 0)


def test_dump_snapshot():
    cache = RadixCache()
    _seq(cache, [5, 6])

    assert cache.dump() == {
        "nodes": [{"id": 1, "parent": 0, "span": [5, 6], "refcount": 1, "children": []}],
        "handles": [{"id": 2, "nodes": [1], "length": 2}],
        "stats": {"nodes": 1, "physicalTokens": 2, "liveHandles": 1},
    }


def test_compose_keeps_a_shared_segment_once(cache):
    shared = _seq(cache, [1, 2])
    left = cache.append(cache.fork(shared, 1)[0], [3])
    other = _seq(cache, [7])
    right = cache.compose([(other, 0, 1), (shared, 0, 2)])
    right = cache.append(right, [4])
    before = cache.stats().physical_tokens

    joined = cache.compose([(left, 0, 3), (right, 0, 1), (right, 3, 4)])

    assert cache.materialize(joined) == [1, 2, 3, 7, 4]
    assert joined.node_ids().count(shared.node_ids()[0]) == 1
    assert cache.stats().physical_tokens == before
    assert cache.check_invariants() == []


def test_compose_splits_nodes_at_range_boundaries(cache):
    base = _seq(cache, [1, 2, 3, 4])

    composite = cache.compose([(base, 0, 2), (base, 1, 3)])

    assert cache.materialize(composite) == [1, 2, 2, 3]
    assert cache.materialize(base) == [1, 2, 3, 4]
    stats = cache.stats()
    assert (stats.nodes, stats.physical_tokens) == (4, 4)
    assert cache.check_invariants() == []


def test_compose_refcounts_repeated_nodes_per_occurrence(cache):
    base = _seq(cache, [1, 2])
    composite = cache.compose([(base, 0, 2), (base, 0, 2)])

    assert composite.node_ids() == base.node_ids() * 2
    cache.release(base)
    assert cache.materialize(composite) == [1, 2, 1, 2]
    cache.release(composite)
    assert cache.stats().nodes == 0


def test_compose_rejects_range_without_its_parent(cache):
    base = _seq(cache, [1, 2, 3, 4])
    with pytest.raises(NotAnExtensionError, match="before its parent"):
        cache.compose([(base, 2, 4)])
    assert cache.materialize(base) == [1, 2, 3, 4]
    assert cache.check_invariants() == []


def test_compose_rejects_range_outside_handle(cache):
    base = _seq(cache, [1, 2])
    with pytest.raises(ValueError, match="outside handle"):
        cache.compose([(base, 1, 3)])
