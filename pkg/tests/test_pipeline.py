import numpy as np
import pytest

from oracles import aps_lp, mms_dp
from fairdiv.core import GeneratorSpec, Instance, XOSValuation, generate_instance
from fairdiv.errors import ExhaustedError, InputError, ValidationError
from fairdiv.pipeline import run_pipeline, summarize, verify_allocation
from fairdiv.randomized import RunParams
from fairdiv.shares import compute_mms

ALPHA = 11 / 40


def identical_inst(values, n):
    v = XOSValuation.additive(values)
    return Instance(n, len(values), tuple(v for _ in range(n)))


@pytest.mark.parametrize("mode", ["identical", "different", "full"])
def test_single_agent_gets_everything(mode):
    inst = Instance(1, 3, (XOSValuation.additive([1.0, 2.0, 3.0]),))
    rep = run_pipeline(inst, ALPHA, mode)
    assert rep.allocation.bundles[0] == frozenset(range(3))
    assert rep.verification.passed and rep.verification.min_ratio >= 1 - 1e-9


@pytest.mark.parametrize("seed", range(8))
def test_identical_corpus_passes_at_aps(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    m = int(rng.integers(4 * n, 12 + 1))
    inst = identical_inst(rng.uniform(0.5, 1.0, m).tolist(), n)
    rep = run_pipeline(inst, ALPHA, "identical")
    assert rep.verification.passed
    share = aps_lp(inst.valuations[0].clauses, n)
    for a in rep.verification.agents:
        assert a.share == pytest.approx(share, abs=1e-9)
        assert a.achieved >= ALPHA * share - 1e-9


def test_mms_witness_has_ratio_one():
    v = XOSValuation.additive([5.0, 4.0, 3.0, 3.0, 2.0, 1.0])
    inst = Instance(3, 6, (v, v, v))
    w = compute_mms(v, 3).witness
    rep = verify_allocation(inst, list(w), 1.0, "mms")
    assert rep.passed
    assert all(a.share == pytest.approx(mms_dp(v.clauses, 3)) for a in rep.agents)
    assert rep.min_ratio == pytest.approx(1.0)


def test_empty_bundles_fail():
    inst = identical_inst([1.0] * 4, 2)
    rep = verify_allocation(inst, [[], []], 0.1)
    assert not rep.passed and rep.failures == 2 and rep.min_ratio == 0.0
    assert verify_allocation(inst, [[], []], 0.0).passed


def test_verify_rejects_bad_input():
    inst = identical_inst([1.0] * 4, 2)
    with pytest.raises(ValidationError):
        verify_allocation(inst, [[0, 1], [1, 2]], 0.25)
    with pytest.raises(ValidationError):
        verify_allocation(inst, [[0], [9]], 0.25)
    with pytest.raises(InputError):
        verify_allocation(inst, [[0]], 0.25)
    with pytest.raises(InputError):
        verify_allocation(inst, [[0], [1]], 0.25, "prop")


def test_verify_ratios_recompute():
    inst = generate_instance(GeneratorSpec(3, 7, (1, 2)), 4)
    bundles = [[0, 1], [2, 3, 4], [5, 6]]
    rep = verify_allocation(inst, bundles, ALPHA)
    for a, B in zip(rep.agents, bundles):
        assert a.achieved == pytest.approx(inst.valuations[a.agent].value(B))
        assert a.share == pytest.approx(aps_lp(inst.valuations[a.agent].clauses, 3), abs=1e-9)
        assert a.ratio == pytest.approx(a.achieved / a.share, abs=1e-9)
        assert a.passed == (a.achieved >= ALPHA * a.share - 1e-9)


def test_full_mode_records_case_and_params():
    inst = generate_instance(GeneratorSpec(3, 9, (1, 2), (0.5, 1.0)), 3)
    params = RunParams.default_schedule(ALPHA, 3, 5)
    rep = run_pipeline(inst, ALPHA, "full", params)
    doc = rep.to_json()
    assert doc["case"]["case"] in (1, 2, 3, 4)
    assert doc["params"]["seed"] == 5 and doc["mode"] == "full"
    assert doc["verification"]["passed"] == rep.verification.passed


def test_different_mode_is_replayable():
    inst = generate_instance(GeneratorSpec(3, 12, (1, 2), (0.5, 1.0)), 8)
    p = RunParams.default_schedule(ALPHA, 3, 2)
    a = run_pipeline(inst, ALPHA, "different", p)
    b = run_pipeline(inst, ALPHA, "different", p)
    assert a.allocation.bundles == b.allocation.bundles


def test_big_items_are_stripped_as_gifts():
    rows = [[20.0] + [1.0] * 8, [1.0] * 9, [1.0] * 9]
    inst = Instance(3, 9, tuple(XOSValuation.additive(r) for r in rows))
    rep = run_pipeline(inst, ALPHA, "different", RunParams(ALPHA, 1.0, 10.0, 0))
    assert rep.gifts
    for i, e in rep.gifts.items():
        assert rep.allocation.bundles[i] == frozenset([e])


def test_identical_mode_rejects_mixed_valuations():
    # no item reaches α·APS for either agent, so nothing is stripped
    inst = Instance(2, 12, (XOSValuation.additive([1.0] * 6 + [1.2] * 6), XOSValuation.additive([1.2] * 6 + [1.0] * 6)))
    with pytest.raises(InputError) as exc:
        run_pipeline(inst, ALPHA, "identical")
    assert exc.value.stage == "allocate"


def test_exhaustion_carries_stage():
    inst = generate_instance(GeneratorSpec(3, 12, (1, 2), (0.5, 1.0)), 1)
    with pytest.raises(ExhaustedError) as exc:
        run_pipeline(inst, ALPHA, "different", RunParams(ALPHA, 1.0, 1e-9, 0))
    assert exc.value.stage == "allocate"


def test_argument_checks():
    inst = identical_inst([1.0] * 4, 2)
    with pytest.raises(InputError):
        run_pipeline(inst, ALPHA, "greedy")
    with pytest.raises(InputError):
        run_pipeline(inst, 1.5)


def test_skip_verification():
    rep = run_pipeline(identical_inst([1.0] * 8, 2), ALPHA, "identical", share=None)
    assert rep.verification is None


def test_summarize_corpus():
    inst = identical_inst([1.0] * 4, 2)
    good = verify_allocation(inst, [[0, 1], [2, 3]], 0.5)
    bad = verify_allocation(inst, [[0, 1, 2], [3]], 0.9)
    s = summarize([good, bad])
    assert s == {"runs": 2, "failures": 1, "failed_runs": 1, "min_ratio": pytest.approx(0.5)}
