import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairdiv import processes as P
from fairdiv.errors import ExhaustedError, InputError
from fairdiv.identical import (
    GreedyState,
    allocate_identical,
    band,
    build_distribution,
    classify_bundles,
    classify_sets,
    greedy_step,
    unify,
)
from fairdiv.shares import NormalizedValuation, layered_valuation


def make_nv(n, bundles, forms, weights=None):
    m = forms.shape[1]
    w = np.full(len(bundles), 1.0 / len(bundles)) if weights is None else np.asarray(weights, float)
    return NormalizedValuation(n, m, 1.0, [frozenset(b) for b in bundles], w, forms)


def disjoint_nv(n, per):
    m = n * per
    forms = np.zeros((n, m))
    bundles = []
    for s in range(n):
        items = range(s * per, (s + 1) * per)
        forms[s, list(items)] = 1.0 / per
        bundles.append(items)
    return make_nv(n, bundles, forms)


def test_band_thresholds():
    assert band(0.6, 0.28) == "3a"
    assert band(0.2, 0.28) == "a"
    assert band(0.3, 0.28) == "2a"
    assert band(1.0, 0.28) == "1"


def test_two_heavy_items_give_three_subbundles():
    forms = np.array([[0.3, 0.3, 0.4]])
    nv = make_nv(1, [{0, 1, 2}], forms, [1.0])
    cp = classify_sets(nv, [frozenset({0, 1})], 0.28)
    assert cp.buckets["3a"] == [0]
    subs = cp.subbundles[0]
    assert len(subs) == 3
    assert all(forms[0, sorted(B)].sum() >= 0.28 for B in subs)
    for e in (0, 1):
        assert sum(e in B for B in subs) <= 2


def test_below_alpha_bundle_contributes_nothing():
    nv = make_nv(1, [{0, 1}], np.array([[0.1, 0.9]]), [1.0])
    cp = classify_sets(nv, [frozenset({0})], 0.28)
    assert cp.buckets["a"] == [0] and 0 not in cp.subbundles
    with pytest.raises(ExhaustedError):
        build_distribution(cp, 1)


def test_top_class_six_items():
    nv = make_nv(1, [range(6)], np.full((1, 6), 1 / 6), [1.0])
    cp = classify_bundles(GreedyState.start(nv), 0.28)
    assert cp.buckets["1"] == [0]
    a, b = cp.subbundles[0]
    assert not a & b
    assert len(a) / 6 >= 0.28 and len(b) / 6 >= 0.28


def test_unify_merges_light_pieces():
    pieces = unify([0, 1, 2, 3], {0: 0.05, 1: 0.05, 2: 0.1, 3: 0.5}, 0.28)
    assert pieces[0][1] == (0, 1, 2) and pieces[0][0] == pytest.approx(0.2)


def test_big_item_needs_stripping():
    nv = make_nv(1, [{0, 1, 2, 3}], np.array([[0.05, 0.05, 0.05, 0.85]]), [1.0])
    with pytest.raises(InputError):
        classify_sets(nv, [frozenset({0, 1, 2, 3})], 0.28)


def test_single_2a_bundle_distribution():
    nv = make_nv(3, [{0, 1}], np.array([[0.2, 0.2]]), [1.0])
    dist = build_distribution(classify_sets(nv, [frozenset({0, 1})], 0.28), 3)
    assert len(dist.candidates) == 1 and dist.candidates[0].prob == 1.0
    assert dist.bound == pytest.approx(1 / 3)


def test_single_top_bundle_distribution():
    nv = make_nv(1, [range(6)], np.full((1, 6), 1 / 6), [1.0])
    cp = classify_sets(nv, [frozenset(range(6))], 0.28)
    assert cp.Lambda == 2.0
    dist = build_distribution(cp, 1)
    assert [c.prob for c in dist.candidates] == [0.5, 0.5]
    assert dist.item_probabilities(6).max() <= 1 / 2 + 1e-12


def test_disjoint_top_bundles_bound():
    n = 5
    nv = disjoint_nv(n, 6)
    dist = build_distribution(classify_bundles(GreedyState.start(nv), 0.28), n)
    assert dist.item_probabilities(nv.m).max() <= 1 / (2 * n) + 1e-12


@given(st.integers(0, 10_000), st.sampled_from([0.25, 0.275]))
@settings(max_examples=60, deadline=None)
def test_distribution_invariants(seed, alpha):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    m = int(rng.integers(6 * n, 8 * n + 1))
    nv = layered_valuation(n, m, 2, rng, 0.2)
    live = [frozenset(e for e in S if rng.random() < 0.8) for S in nv.bundles]
    cp = classify_sets(nv, live, alpha)
    if cp.Lambda <= 0:
        return
    dist = build_distribution(cp, n)
    assert sum(c.prob for c in dist.candidates) == pytest.approx(1.0, abs=1e-12)
    for c in dist.candidates:
        assert nv.forms[c.parent, sorted(c.bundle)].sum() >= alpha - 1e-9
        assert c.bundle <= live[c.parent]
    assert dist.item_probabilities(m).max() <= dist.bound + 1e-12
    # buckets partition the positive-weight bundles
    ids = sorted(s for b in cp.buckets.values() for s in b)
    assert ids == [s for s in range(len(nv.bundles)) if nv.weights[s] > 0]


def test_first_round_on_disjoint_bundles():
    for n in (2, 4, 7):
        state = GreedyState.start(disjoint_nv(n, 6))
        _, nxt, _ = greedy_step(state, 0.28)
        assert nxt.beta >= 1 - 1 / (2 * n) - 1e-12


@pytest.mark.parametrize("seed", range(15))
def test_round_bound_and_expected_potential(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    nv = layered_valuation(n, int(rng.integers(6 * n, 7 * n + 1)), 2, rng, 0.2)
    state = GreedyState.start(nv)
    alpha = 0.25
    for _ in range(n - 1):
        cp = classify_bundles(state, alpha)
        if cp.Lambda <= 0:
            break
        dist = build_distribution(cp, n)
        beta = state.beta
        expected = 0.0
        for c in dist.candidates:
            rem = state.remaining.copy()
            rem[list(c.bundle)] = 0
            expected += c.prob * nv.beta(rem)
        assert expected >= (1 - 1 / (n * cp.Lambda)) * beta - 1e-12
        _, state, _ = greedy_step(state, alpha)
        assert state.beta >= (1 - 1 / (n * cp.Lambda)) * beta - 1e-12


@pytest.mark.parametrize("seed", range(8))
def test_exhaustive_dominates_efficient(seed):
    rng = np.random.default_rng(seed)
    nv = layered_valuation(2, 10, 2, rng, 0.24)
    state = GreedyState.start(nv)
    _, eff, _ = greedy_step(state, 0.25, "efficient")
    _, exh, _ = greedy_step(state, 0.25, "exhaustive")
    assert exh.beta >= eff.beta - 1e-12


def test_single_agent_takes_all():
    nv = disjoint_nv(1, 4)
    res = allocate_identical(nv, 0.275)
    assert res.bundles == [frozenset(range(4))] and res.values == [pytest.approx(1.0)]


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_disjoint_bundles_reach_quarter_and_track_gamma(n):
    res = allocate_identical(disjoint_nv(n, 8), 0.25)
    assert all(v >= 0.25 for v in res.values)
    seen = set()
    for B in res.bundles:
        assert not seen & B
        seen |= B
    gam = P.gamma_trace(P.GammaConfig("small", n, 0.25)).values
    assert all(b >= g - 1e-12 for b, g in zip(res.betas, gam))
    assert all(x >= y - 1e-12 for x, y in zip(res.betas, res.betas[1:]))


def test_runs_are_deterministic_and_trace_exports():
    rng = np.random.default_rng(3)
    nv = layered_valuation(3, 18, 2, rng, 0.2)
    a, b = allocate_identical(nv, 0.275), allocate_identical(nv, 0.275)
    assert a.bundles == b.bundles
    lines = a.trace_csv().splitlines()
    assert lines[0] == "round,beta,Lambda,L_a,L_2a,L_3a,L_1"
    assert len(lines) == 1 + 3
