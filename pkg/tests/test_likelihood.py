import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import all_trees_text, lr_brute, matching_sums_brute, parse, permanent_brute
from artifact.likelihood import (
    NEG_INF, ContractViolation, LRCache, ResourceError, grouped_matching_sums, gw_log_likelihood,
    identity_embedding, likelihood_ratio, lr_lower_bound, matching_sums, poisson_cutoff, psi,
)
from artifact.sampling import ModelParams, sample_corr_gw, spawn_rng
from artifact.treespace import TreeArena, enumerate_trees

SMALL_TREES = all_trees_text(4)
POINTS = [(1.5, 0.8, 0.6), (0.7, 0.3, 0.9), (1.0, 1.0, 0.5), (1.2, 0.5, 0.5)]


@pytest.mark.parametrize("lam,s,sp", POINTS)
@pytest.mark.parametrize("d", [1, 2])
def test_recursion_matches_convolution_law(lam, s, sp, d):
    params = ModelParams.for_trees(lam, s, sp)
    arena = TreeArena()
    for a in SMALL_TREES:
        for b in SMALL_TREES:
            ref = lr_brute(parse(a), parse(b), d, lam, s, sp)
            got = math.exp(likelihood_ratio(arena.from_parens(a), arena.from_parens(b), d, params, arena))
            if ref == 0.0:
                assert got == 0.0
            else:
                assert abs(got - ref) <= 1e-9 * ref


def test_depth_zero_and_single_nodes():
    params = ModelParams.for_trees(2.0, 0.8, 0.9)
    arena = TreeArena()
    t = arena.from_parens("((())())")
    assert likelihood_ratio(t, t, 0, params, arena) == 0.0
    assert math.isclose(likelihood_ratio(0, 0, 1, params, arena), params.lam * 0.72, rel_tol=1e-15)


def test_psi_values():
    assert psi(0, 0, 0, 1.0, 0.5, 0.5) == 0.25
    with pytest.raises(ContractViolation):
        psi(2, 1, 3, 1.0, 0.5, 0.5)
    assert psi(0, 1, 0, 1.0, 0.5, 1.0) == NEG_INF


def test_gw_masses_sum_to_one():
    arena = TreeArena()
    memo: dict = {}
    total = sum(math.exp(gw_log_likelihood(t, 2, 0.8, arena, memo)) for t in enumerate_trees(2, 24, arena))
    assert total == pytest.approx(1.0, abs=1e-6)


def test_poisson_cutoff_covers_mass():
    from scipy import stats

    for mu in (0.1, 1.0, 7.5):
        assert stats.poisson.sf(poisson_cutoff(mu), mu) < 1e-15


def test_permanent_of_small_matrix():
    rng = np.random.default_rng(0)
    m = rng.integers(1, 4, size=(5, 5)).astype(float)
    ref = permanent_brute(m.tolist())
    got = math.exp(matching_sums(np.log(m))[-1])
    assert got == pytest.approx(ref, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.data())
def test_matching_sums_match_brute_force(c, cp, data):
    w = data.draw(st.lists(st.lists(st.floats(0.0, 3.0), min_size=cp, max_size=cp), min_size=c, max_size=c))
    with np.errstate(divide="ignore"):
        got = np.exp(matching_sums(np.log(np.array(w))))
    ref = matching_sums_brute(w)
    assert np.allclose(got, ref, rtol=1e-10, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=1, max_size=3),
       st.lists(st.integers(1, 3), min_size=1, max_size=3), st.data())
def test_grouped_sums_match_expanded(rows, cols, data):
    w = np.array(data.draw(st.lists(st.lists(st.floats(0.1, 2.0), min_size=len(cols), max_size=len(cols)),
                                    min_size=len(rows), max_size=len(rows))))
    full = np.repeat(np.repeat(w, rows, axis=0), cols, axis=1)
    assert np.allclose(grouped_matching_sums(np.log(w), rows, cols), matching_sums(np.log(full)))


def test_matching_bound_raises():
    with pytest.raises(ResourceError):
        matching_sums(np.zeros((21, 21)))
    with pytest.raises(ResourceError):
        grouped_matching_sums(np.zeros((22, 22)), [1] * 22, [1] * 22)
    assert grouped_matching_sums(np.zeros((1, 22)), [30], [1] * 22).size == 23


trees_st = st.sampled_from(all_trees_text(6))


@settings(max_examples=80, deadline=None)
@given(trees_st, trees_st, st.integers(0, 3), st.floats(0.5, 3.0),
       st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_symmetry(a, b, d, lam, s, sp):
    arena = TreeArena()
    t, tp = arena.from_parens(a), arena.from_parens(b)
    left = likelihood_ratio(t, tp, d, ModelParams.for_trees(lam, s, sp), arena)
    right = likelihood_ratio(tp, t, d, ModelParams.for_trees(lam, sp, s), arena)
    assert left == pytest.approx(right, rel=1e-12, abs=1e-12) or left == right == NEG_INF


@settings(max_examples=40, deadline=None)
@given(trees_st, trees_st, st.integers(1, 3))
def test_cache_is_transparent(a, b, d):
    params = ModelParams.for_trees(2.0, 0.7, 0.8)
    arena = TreeArena()
    t, tp = arena.from_parens(a), arena.from_parens(b)
    cache = LRCache(params, arena)
    warm = likelihood_ratio(tp, t, d, params, arena, cache)
    assert likelihood_ratio(t, tp, d, params, arena, cache) == likelihood_ratio(t, tp, d, params, arena)
    assert warm == likelihood_ratio(tp, t, d, params, arena)


def test_cache_rejects_foreign_params():
    arena = TreeArena()
    cache = LRCache(ModelParams.for_trees(1.0, 0.5, 0.5), arena)
    with pytest.raises(ContractViolation):
        likelihood_ratio(0, 0, 1, ModelParams.for_trees(2.0, 0.5, 0.5), arena, cache)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_exact_mean_at_depth_one(lam):
    from scipy import stats

    params = ModelParams.for_trees(lam, 0.8, 0.6)
    arena = TreeArena()
    stars = enumerate_trees(1, 30, arena)
    cache = LRCache(params, arena)
    total = 0.0
    for t in stars:
        for tp in stars:
            p_ind = stats.poisson.pmf(arena.degree(t), lam * 0.8) * stats.poisson.pmf(arena.degree(tp), lam * 0.6)
            total += p_ind * math.exp(likelihood_ratio(t, tp, 1, params, arena, cache))
    eps = stats.poisson.sf(29, lam * 0.8) + stats.poisson.sf(29, lam * 0.6)
    assert 1 - eps - 1e-12 <= total <= 1 + 1e-12


def test_lower_bound_below_ratio():
    params = ModelParams.for_trees(3.0, 0.8, 0.8)
    arena = TreeArena()
    rng = spawn_rng(2)
    checked = 0
    for _ in range(200):
        t, tp = sample_corr_gw(params, 3, rng, arena)
        t_star = arena.truncate(t, 1)
        if t_star != arena.truncate(tp, 1) or arena.degree(t_star) > 6:
            continue
        emb = identity_embedding(arena, t_star, 1)
        for k in (0, 1, 2):
            bound = lr_lower_bound(t, tp, t_star, emb, emb, 1, k, params, arena)
            assert bound <= likelihood_ratio(t, tp, 1 + k, params, arena) + 1e-9
        checked += 1
    assert checked > 10


def test_lower_bound_rejects_bad_embedding():
    params = ModelParams.for_trees(1.0, 0.5, 0.5)
    arena = TreeArena()
    t = arena.from_parens("(()())")
    with pytest.raises(ContractViolation):
        lr_lower_bound(t, t, t, {(): (), (0,): (0,), (1,): (0,)}, identity_embedding(arena, t, 1), 1, 0, params, arena)
    with pytest.raises(ContractViolation):
        lr_lower_bound(t, t, t, {(): ()}, {(): ()}, 1, 0, params, arena)


def test_negative_depth_rejected():
    with pytest.raises(ContractViolation):
        likelihood_ratio(0, 0, -1, ModelParams.for_trees(1.0, 0.5, 0.5), TreeArena())
