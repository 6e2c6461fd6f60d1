import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import ahu_string, brute_tree_counts, parse
from artifact.treespace import (
    OTTER_ALPHA, StructuralInputError, TreeArena, canonicalize, count_by_size, enumerate_trees,
    otter_ratio,
)

parent_arrays = st.integers(1, 25).flatmap(
    lambda n: st.tuples(*(st.integers(0, max(i - 1, 0)) for i in range(n)))
)


def tree_from_parents(parents):
    adj = {i: [] for i in range(len(parents))}
    for v in range(1, len(parents)):
        adj[v].append(parents[v])
        adj[parents[v]].append(v)
    return adj


def test_single_node_is_id_zero():
    arena = TreeArena()
    assert canonicalize({0: []}, 0, arena) == 0
    assert arena.size(0) == 1 and arena.depth(0) == 0


def test_star_and_path_examples():
    arena = TreeArena()
    star = canonicalize({0: [1, 2, 3], 1: [0], 2: [0], 3: [0]}, 0, arena)
    assert star == arena.star(3)
    assert arena.to_parens(star) == "(()()())"
    path = canonicalize([[1], [0, 2], [1]], 0, arena)
    assert path == arena.path(3)
    assert arena.depth(path) == 2


def test_cycle_and_disconnection_rejected():
    arena = TreeArena()
    with pytest.raises(StructuralInputError):
        canonicalize({0: [1, 2], 1: [0, 2], 2: [0, 1]}, 0, arena)
    with pytest.raises(StructuralInputError):
        canonicalize({0: [1], 1: [0], 2: []}, 0, arena)


def test_parens_rejects_garbage():
    arena = TreeArena()
    for bad in ["", "(()", "())", "()()", "(x)"]:
        with pytest.raises(StructuralInputError):
            arena.from_parens(bad)


@settings(max_examples=200, deadline=None)
@given(parent_arrays, st.randoms(use_true_random=False))
def test_canonicalize_is_relabeling_invariant(parents, rnd):
    arena = TreeArena()
    adj = tree_from_parents(parents)
    base = canonicalize(adj, 0, arena)
    for _ in range(5):
        perm = list(range(len(parents)))
        rnd.shuffle(perm)
        relabeled = {perm[u]: [perm[v] for v in vs] for u, vs in adj.items()}
        assert canonicalize(relabeled, perm[0], arena) == base
    assert parse(arena.to_parens(base)) == parse(ahu_string([-1, *parents[1:]]))


@settings(max_examples=100, deadline=None)
@given(parent_arrays)
def test_parens_round_trip(parents):
    arena = TreeArena()
    t = canonicalize(tree_from_parents(parents), 0, arena)
    other = TreeArena()
    assert arena.to_parens(other.from_parens(arena.to_parens(t))) == arena.to_parens(t)
    assert arena.from_parens(arena.to_parens(t)) == t


@settings(max_examples=100, deadline=None)
@given(parent_arrays, st.integers(0, 6))
def test_truncate_matches_depth(parents, d):
    arena = TreeArena()
    t = canonicalize(tree_from_parents(parents), 0, arena)
    cut = arena.truncate(t, d)
    assert arena.depth(cut) == min(d, arena.depth(t))
    assert arena.truncate(cut, d) == cut


def test_caches_match_recomputation():
    arena = TreeArena()
    enumerate_trees(4, 9, arena)
    for t in range(len(arena)):
        kids = arena.children(t)
        assert arena.size(t) == 1 + sum(arena.size(c) for c in kids)
        assert arena.depth(t) == (1 + max(arena.depth(c) for c in kids) if kids else 0)


@pytest.mark.parametrize("d", range(5))
def test_count_matches_enumeration(d):
    arena = TreeArena()
    sizes = Counter(arena.size(t) for t in enumerate_trees(d, 10, arena))
    counts = count_by_size(d, 10)
    assert all(counts[n] == sizes.get(n, 0) for n in range(1, 11))


def test_enumeration_small_listing():
    arena = TreeArena()
    texts = [arena.to_parens(t) for t in enumerate_trees(2, 3, arena)]
    assert texts == ["()", "(())", "(()())", "((()))"]


def test_counts_match_brute_force():
    counts = count_by_size(7, 8)
    assert [counts[n] for n in range(1, 9)] == brute_tree_counts(8) == [1, 1, 2, 4, 9, 20, 48, 115]


def test_corrected_otter_ratio_converges():
    r = otter_ratio(40, corrected=True)
    assert abs(r[40] * OTTER_ALPHA - 1) < 1e-3
    assert abs(r[40] * OTTER_ALPHA - 1) < abs(r[5] * OTTER_ALPHA - 1)


def test_arena_is_thread_safe():
    from concurrent.futures import ThreadPoolExecutor

    arena = TreeArena()
    texts = ["((()())(()))", "(()()())", "((((()))))"] * 50
    random.Random(0).shuffle(texts)
    with ThreadPoolExecutor(8) as pool:
        ids = list(pool.map(arena.from_parens, texts))
    assert len({(x, i) for x, i in zip(texts, ids)}) == 3
