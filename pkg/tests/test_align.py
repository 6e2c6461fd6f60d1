import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.align import (
    default_depth, dangling_tree, error_fraction, extract_neighborhood, mpalign, overlap,
)
from artifact.likelihood import ContractViolation
from artifact.sampling import Graph, ModelParams, sample_er, spawn_rng
from artifact.testing import CONSTANT, TestSpec, TreeTester, lr_spec
from artifact.treespace import TreeArena

TREE_PARAMS = ModelParams.for_trees(2.0, 1.0, 1.0)


def random_tree_graph(n: int, rng) -> Graph:
    return Graph.from_edges(n, [(i, int(rng.integers(0, i))) for i in range(1, n)])


def test_neighborhood_examples():
    arena = TreeArena()
    assert extract_neighborhood(Graph(1, [[]]), 0, 5, arena).tree == 0
    tri = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    assert all(extract_neighborhood(tri, i, 2, arena).has_cycle for i in range(3))
    path5 = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    assert extract_neighborhood(path5, 0, 2, arena).tree == arena.path(3)
    with pytest.raises(ContractViolation):
        extract_neighborhood(path5, 9, 1, arena)


def test_cycle_beyond_radius_is_ignored():
    arena = TreeArena()
    # square hanging two steps away from node 0
    g = Graph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 2)])
    assert not extract_neighborhood(g, 0, 2, arena).has_cycle
    assert extract_neighborhood(g, 0, 4, arena).has_cycle


def test_dangling_examples():
    arena = TreeArena()
    star = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    assert dangling_tree(star, 0, 1, 2, arena) == 0
    path = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert dangling_tree(path, 1, 2, 2, arena) == arena.path(2)
    with pytest.raises(ContractViolation):
        dangling_tree(path, 0, 3, 2, arena)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**31), st.integers(1, 4))
def test_dangling_trees_decompose_neighborhood(n, seed, d):
    arena = TreeArena()
    rng = np.random.default_rng(seed)
    g = random_tree_graph(n, rng)
    i = int(rng.integers(0, n))
    ball = extract_neighborhood(g, i, d, arena).tree
    hanging = Counter(dangling_tree(g, i, k, d, arena) for k in g.adj[i])
    assert hanging == arena.root_counts(ball)


def test_overlap_and_error_examples():
    sigma = {i: i + 100 for i in range(10)}
    assert overlap(dict(sigma), sigma, 10) == 1.0
    assert overlap({}, sigma, 10) == 0.0
    half = {i: (i + 100 if i < 5 else 0) for i in range(10)}
    assert overlap(half, sigma, 10) == 0.5
    assert error_fraction(dict(sigma), sigma, 100) == 0.0
    assert error_fraction({50: 3}, sigma, 100) == 0.01
    assert error_fraction({i: -1 for i in range(10)}, sigma, 10) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.integers(0, 30), st.integers(0, 30)),
       st.dictionaries(st.integers(0, 30), st.integers(0, 30), min_size=1))
def test_scores_are_fractions(matches, sigma):
    n = 31
    assert 0.0 <= overlap(matches, sigma, len(sigma)) <= 1.0
    assert 0.0 <= error_fraction(matches, sigma, n) <= 1.0


def test_empty_and_path_graphs_match_nothing():
    tester = TreeTester(TREE_PARAMS, TreeArena())
    yes = TestSpec(CONSTANT, 1, TREE_PARAMS, value=True)
    empty = Graph(0, [])
    res = mpalign(empty, empty, 2, yes, tester, {}, 0)
    assert res.matches == {} and res.overlap == 0.0
    path = Graph.from_edges(6, [(i, i + 1) for i in range(5)])
    assert mpalign(path, path, 2, yes, tester).matches == {}


def test_contract_checks():
    tester = TreeTester(TREE_PARAMS, TreeArena())
    g = Graph(1, [[]])
    with pytest.raises(ContractViolation):
        mpalign(g, g, 1, TestSpec(CONSTANT, 0, TREE_PARAMS, value=True), tester)
    with pytest.raises(ContractViolation):
        mpalign(g, g, 3, TestSpec(CONSTANT, 1, TREE_PARAMS, value=True), tester)


def test_degree_guard():
    tester = TreeTester(TREE_PARAMS, TreeArena())
    rng = spawn_rng(1)
    g = random_tree_graph(120, rng)
    yes = TestSpec(CONSTANT, 1, TREE_PARAMS, value=True)
    res = mpalign(g, g, 2, yes, tester)
    assert all(g.degree(i) >= 3 and g.degree(j) >= 3 for i, j in res.matches.items())


@pytest.mark.parametrize("seed", range(4))
def test_relabeled_tree_is_recovered(seed):
    rng = spawn_rng(seed)
    n = 300
    g = random_tree_graph(n, rng)
    perm = rng.permutation(n)
    gp = g.relabel(perm)
    sigma = {i: int(perm[i]) for i in range(n)}
    tester = TreeTester(TREE_PARAMS, TreeArena())
    res = mpalign(g, gp, 3, lr_spec(TREE_PARAMS, 2, 2.0), tester, sigma, n)
    assert len(set(res.matches.values())) == len(res.matches)
    assert res.overlap > 0.05
    assert res.error_fraction < 0.05
    for i, j, score in res.candidates:
        assert score > 2.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(-1.0, 3.0))
def test_resolved_map_is_injective(seed, theta):
    rng = np.random.default_rng(seed)
    g, gp = random_tree_graph(80, rng), random_tree_graph(80, rng)
    res = mpalign(g, gp, 2, lr_spec(TREE_PARAMS, 1, theta), TreeTester(TREE_PARAMS, TreeArena()))
    assert len(set(res.matches.values())) == len(res.matches)
    assert set(res.matches.items()) <= {(i, j) for i, j, _ in res.candidates}


def test_cyclic_neighborhoods_are_counted():
    g = sample_er(300, 6 / 300, spawn_rng(2))
    res = mpalign(g, g, 2, TestSpec(CONSTANT, 1, TREE_PARAMS, value=True), TreeTester(TREE_PARAMS, TreeArena()))
    diag = res.diagnostics
    assert diag["low_degree_a"] + diag["cycle_skipped_a"] + diag["eligible_a"] == 300
    assert diag["cycle_skipped_a"] > 0


def test_default_depth():
    assert default_depth(0.1, 1000, 2.0, 0.9, 0.9) == math.floor(0.1 * math.log(1000))
    with pytest.warns(RuntimeWarning):
        default_depth(1.0, 1000, 5.0, 1.0, 1.0)
