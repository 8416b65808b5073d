from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from byzdiff.core import InvalidParameter, Protocol
from byzdiff.protocols import (
    TargetSelector,
    build_tree_layout,
    ltree_targets,
    random_targets,
    round_robin_targets,
    sample_distinct,
)


def test_layout_sixteen_by_four():
    layout = build_tree_layout(16, 4)
    assert [list(b) for b in layout.blocks] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9, 10, 11], [12, 13, 14, 15]]
    # node 1's children are nodes 3 and 4; node 4 does not exist
    assert layout.candidate_set(4) == {0, 1, 2, 3, 12, 13, 14, 15}


def test_layout_single_block():
    layout = build_tree_layout(4, 4)
    assert layout.num_nodes == 1
    assert layout.candidate_set(2) == {0, 1, 3}


def test_layout_uneven_last_block():
    layout = build_tree_layout(100, 64)
    assert [len(b) for b in layout.blocks] == [64, 36]
    assert layout.candidate_set(0) == set(range(1, 100))


@pytest.mark.parametrize("ell", [0, 17])
def test_layout_rejects_bad_block_size(ell):
    with pytest.raises(InvalidParameter):
        build_tree_layout(16, ell)


@given(n=st.integers(1, 200), ell=st.integers(1, 200))
def test_layout_invariants(n, ell):
    if ell > n:
        return
    layout = build_tree_layout(n, ell)
    members = [p for b in layout.blocks for p in b]
    assert sorted(members) == list(range(n))
    assert all(len(b) == ell for b in layout.blocks[:-1])
    for p in range(0, n, max(1, n // 7)):
        cand = layout.candidate_set(p)
        assert p not in cand
        # a non-root replica's own block is not a candidate, so 3ℓ is reachable
        assert len(cand) <= 3 * ell
        node = layout.node_of(p)
        if node == 0:
            assert len(cand) <= 3 * ell - 1
        expect = set(layout.blocks[0])
        for c in layout.children(node):
            expect |= set(layout.blocks[c])
        assert cand == expect - {p}


def test_random_targets_trivial_cases(rng):
    assert random_targets(rng, 2, 0, 1) == {1}
    assert random_targets(rng, 100, 5, 99) == set(range(100)) - {5}


def test_random_targets_frequency(rng):
    counts = Counter()
    for _ in range(100_000):
        (target,) = random_targets(rng, 10, 3, 1)
        counts[target] += 1
    assert 3 not in counts
    for p in set(range(10)) - {3}:
        assert abs(counts[p] / 100_000 - 1 / 9) < 0.01


def test_ltree_targets_exhaust_candidate_set(rng):
    assert ltree_targets(rng, build_tree_layout(4, 4), 0, 3) == {1, 2, 3}
    layout = build_tree_layout(16, 4)
    assert ltree_targets(rng, layout, 4, 8) == layout.candidate_set(4)
    assert ltree_targets(rng, layout, 4, 20) == layout.candidate_set(4)


def test_ltree_targets_frequency(rng):
    layout = build_tree_layout(16, 4)
    counts = Counter()
    for _ in range(100_000):
        (target,) = ltree_targets(rng, layout, 4, 1)
        counts[target] += 1
    assert set(counts) == layout.candidate_set(4)
    for c in counts.values():
        assert abs(c / 100_000 - 1 / 8) < 0.01


def test_round_robin_cycles():
    assert [round_robin_targets(r, 4, 0, 1) for r in range(4)] == [{1}, {2}, {3}, {1}]
    assert round_robin_targets(0, 4, 0, 3) == {1, 2, 3}


@given(n=st.integers(2, 60), self_id=st.integers(0, 59))
def test_round_robin_covers_everyone_within_n_rounds(n, self_id):
    self_id %= n
    seen = set().union(*(round_robin_targets(r, n, self_id, 1) for r in range(n)))
    assert seen == set(range(n)) - {self_id}


@settings(max_examples=40)
@given(pool=st.lists(st.integers(1, 30), min_size=1, max_size=20), k=st.integers(1, 10), seed=st.integers(0, 2**32))
def test_sample_distinct_rows_are_distinct_and_in_range(pool, k, seed):
    out = sample_distinct(np.random.default_rng(seed), np.array(pool), k)
    for row, size in zip(out, pool):
        vals = row[row >= 0]
        assert len(vals) == min(k, size)
        assert len(set(vals.tolist())) == len(vals)
        assert vals.max() < size


def test_sample_distinct_uniform_over_subsets():
    # all 10 two-element subsets of a 5-element pool should be equally likely
    out = sample_distinct(np.random.default_rng(7), np.full(200_000, 5), 2)
    counts = Counter(tuple(sorted(r)) for r in out.tolist())
    assert len(counts) == 10
    for c in counts.values():
        assert abs(c / 200_000 - 0.1) < 0.005


@pytest.mark.parametrize("protocol", [Protocol.random(), Protocol.ltree(8), Protocol.round_robin()])
def test_targets_exclude_self_and_respect_fan_out(protocol):
    sel = TargetSelector(protocol, 40, 3)
    rng = np.random.default_rng(1)
    for r in range(20):
        src, dst = sel.select(rng, np.arange(40), r)
        assert not (src == dst).any()
        assert np.bincount(src, minlength=40).max() <= 3


def test_same_seed_same_targets():
    sel = TargetSelector(Protocol.ltree(8), 50, 2)
    a = [sel.select(np.random.default_rng(9), np.arange(50), r)[1] for r in range(5)]
    b = [sel.select(np.random.default_rng(9), np.arange(50), r)[1] for r in range(5)]
    assert all((x == y).all() for x, y in zip(a, b))


def test_tree_random_is_ltree_with_4t():
    assert Protocol.tree(5) == Protocol.ltree(20)


def test_ltree_with_block_n_has_random_candidate_sets():
    layout = build_tree_layout(30, 30)
    for p in range(30):
        assert layout.candidate_set(p) == set(range(30)) - {p}
