import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import aps_lp, mms_dp
from fairdiv.core import Instance, XOSValuation, value
from fairdiv.errors import CapacityError, DegenerateError
from fairdiv.shares import (
    FractionalPartition,
    compute_aps,
    compute_mms,
    exact_cover,
    normalize_aps,
    reweight_after_removal,
    strip_big_items,
)


def rand_v(rng, k, m, scale=1.0):
    return XOSValuation(tuple(map(tuple, rng.random((k, m)) * scale)))


def test_mms_small_additive():
    res = compute_mms(XOSValuation.additive([3, 2, 1]), 2)
    assert res.value == 3
    assert sorted(map(sorted, res.witness)) == [[0], [1, 2]]


def test_single_agent_shares_take_everything():
    v = XOSValuation(((1, 2, 3), (4, 0, 0)))
    assert compute_mms(v, 1).value == 6
    assert compute_aps(v, 1).value == pytest.approx(6)


def test_aps_identical_unit_items():
    for n in range(1, 6):
        assert compute_aps(XOSValuation.additive([1.0] * n), n).value == pytest.approx(1.0)


def test_mms_capacity_guard():
    with pytest.raises(CapacityError):
        compute_mms(XOSValuation.additive([1.0] * 13), 2)


@pytest.mark.parametrize("seed", range(25))
def test_mms_matches_subset_dp(seed):
    rng = np.random.default_rng(seed)
    cl = rng.random((int(rng.integers(1, 4)), 7))
    v = XOSValuation(tuple(map(tuple, cl)))
    res = compute_mms(v, 3)
    assert res.value == pytest.approx(mms_dp(cl, 3), abs=1e-12)
    assert sorted(e for B in res.witness for e in B) == list(range(7))
    assert min(value(v, B) for B in res.witness) == pytest.approx(res.value)


@pytest.mark.parametrize("seed", range(25))
def test_aps_matches_highs(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 6))
    cl = rng.random((int(rng.integers(1, 4)), int(rng.integers(1, 10))))
    v = XOSValuation(tuple(map(tuple, cl)))
    res = compute_aps(v, n)
    assert res.value == pytest.approx(aps_lp(cl, n), abs=1e-9)
    fp = res.witness
    assert fp.is_valid(v.m)
    assert min(value(v, B) for B, w in zip(fp.bundles, fp.weights) if w > 1e-12) >= res.value - 1e-9


def test_aps_strictly_above_mms():
    cl = [[0, 4, 1, 2, 3, 3, 1, 2], [4, 2, 0, 3, 3, 4, 4, 0]]
    v = XOSValuation(tuple(map(tuple, cl)))
    assert compute_aps(v, 3).value == pytest.approx(8.0) == aps_lp(cl, 3)
    assert compute_mms(v, 3).value == 7.0 == mms_dp(cl, 3)


@given(st.integers(0, 10_000), st.floats(0.01, 100))
@settings(max_examples=30, deadline=None)
def test_aps_scale_equivariant(seed, c):
    rng = np.random.default_rng(seed)
    v = rand_v(rng, 2, 6)
    assert compute_aps(v.scaled(c), 3).value == pytest.approx(c * compute_aps(v, 3).value, rel=1e-9, abs=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_normalized_valuation_invariants(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    v = rand_v(rng, int(rng.integers(1, 3)), int(rng.integers(n, 9)))
    nv = normalize_aps(v, n)
    assert len(nv.bundles) <= 2 * v.m + 1  # exact cover may split bundles
    assert nv.weights.sum() == pytest.approx(1.0)
    cov = nv.partition.coverage(v.m)
    assert np.allclose(cov, 1.0 / n)
    for s, S in enumerate(nv.bundles):
        row = nv.forms[s]
        assert row[sorted(S)].sum() == pytest.approx(1.0)
        assert np.all(row[[e for e in range(v.m) if e not in S]] == 0)
    # ṽ never exceeds v / APS
    for mask in range(1, 1 << v.m):
        S = [e for e in range(v.m) if mask >> e & 1]
        assert nv.value(S) <= v.value(S) / nv.scale + 1e-9
    assert compute_aps(nv.valuation, n).value == pytest.approx(1.0, abs=1e-9)


def test_normalize_is_scale_invariant():
    rng = np.random.default_rng(1)
    v = rand_v(rng, 2, 6)
    a, b = normalize_aps(v, 3), normalize_aps(v.scaled(5.0), 3)
    assert np.allclose(a.forms, b.forms) and np.allclose(a.weights, b.weights)
    assert b.scale == pytest.approx(5 * a.scale)


def test_normalize_zero_aps():
    with pytest.raises(DegenerateError):
        normalize_aps(XOSValuation.additive([1.0, 0.0, 0.0]), 2)


def test_exact_cover_pads_to_entitlement():
    fp = FractionalPartition([frozenset({0}), frozenset({1})], np.array([0.5, 0.5]), 0.5)
    out = exact_cover(fp, range(3))
    assert np.allclose(out.coverage(3), 0.5)
    assert out.weights.sum() == pytest.approx(1.0)


def test_reweight_two_disjoint_bundles():
    fp = FractionalPartition([frozenset({0}), frozenset({1})], np.array([0.5, 0.5]), 0.5)
    out = reweight_after_removal(fp, 0, 2)
    assert list(out.weights) == [0.0, 1.0]


def test_reweight_item_outside_support():
    fp = FractionalPartition([frozenset({0}), frozenset({1}), frozenset({2})], np.full(3, 1 / 3), 1 / 3)
    out = reweight_after_removal(fp, 5, 3)
    assert np.allclose(out.weights, 0.5)
    assert np.all(out.coverage(6) <= 0.5 + 1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_reweight_keeps_a_valid_partition(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    v = rand_v(rng, 2, int(rng.integers(n, 8)))
    res = compute_aps(v, n)
    e = int(rng.integers(v.m))
    out = reweight_after_removal(res.witness, e, n)
    assert out.weights.sum() == pytest.approx(1.0)
    assert np.all(out.coverage(v.m) <= 1 / (n - 1) + 1e-9)
    alive = [B for B, w in zip(out.bundles, out.weights) if w > 1e-12]
    assert all(e not in B for B in alive)
    assert min(value(v, B) for B in alive) >= res.value - 1e-9


def test_strip_no_big_items_is_identity():
    inst = Instance(2, 12, tuple(XOSValuation.additive([1.0] * 12) for _ in range(2)))
    st_ = strip_big_items(inst, 0.2)
    assert st_.gifts == {} and st_.items == list(range(12))


def test_strip_single_agent():
    inst = Instance(1, 1, (XOSValuation.additive([1.0]),))
    st_ = strip_big_items(inst, 0.3)
    assert st_.gifts == {0: 0} and st_.reduced is None


@pytest.mark.parametrize("seed", range(6))
def test_strip_keeps_remaining_shares(seed):
    rng = np.random.default_rng(seed)
    rows = rng.uniform(0.5, 1.0, (3, 9))
    rows[0, 0] = 20.0  # one big item for agent 0
    inst = Instance(3, 9, tuple(XOSValuation.additive(r) for r in rows))
    st_ = strip_big_items(inst, 0.3)
    assert 0 in st_.gifts
    for j in st_.agents:
        assert st_.aps_after[j] >= st_.aps_before[j] - 1e-9
        assert st_.aps_after[j] == pytest.approx(aps_lp([rows[j][st_.items]], len(st_.agents)), abs=1e-9)
