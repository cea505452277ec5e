import numpy as np
import pytest

from vedsim.channel import ChannelSnapshot
from vedsim.comm import (IDLE, ComputeModel, LinkBudgetParams, Mode, SlotDecision, SlotOutcome, compute_cost,
                         decode_constraint_ok, rate_cot, rate_dt, rate_v2v, slot_outcome, update_progress)
from vedsim.errors import ConfigurationError, RejectedDecisionError

LINK = LinkBudgetParams(bandwidth=20e6, slot_length=0.1)
N0 = LINK.noise_power


def test_rate_dt_examples():
    assert rate_dt(1.0, N0, LINK) == pytest.approx(20e6)
    assert rate_dt(0.0, N0, LINK) == 0.0
    assert rate_dt(3.0, N0, LINK) == pytest.approx(40e6)


def test_rate_v2v_matches_dt_formula():
    assert rate_v2v(3.0, N0, LINK) == pytest.approx(40e6)


def test_rate_cot_examples():
    assert rate_cot(0.2, 1e-9, [], LINK) == pytest.approx(rate_dt(0.2, 1e-9, LINK))
    assert rate_cot(1.0, N0, [(1.0, N0), (1.0, N0)], LINK) == pytest.approx(2 * 20e6)


def _snap(v2i, opv2i, v2v):
    S, U = len(v2i), len(opv2i)
    return ChannelSnapshot(1, tuple(range(S)), tuple(range(S, S + U)), np.array(v2i, float),
                           np.array(opv2i, float), np.array(v2v, float).reshape(S, U))


def test_dt_always_decodable():
    d = SlotDecision(0, Mode.DT, (), {0: 0.3})
    assert decode_constraint_ok(d, _snap([1e-9], [], []), LINK)


def test_decode_holds_with_strong_sidelink():
    # SNRs: direct 1, relay 1, SOV->OPV 10, so the V2V rate exceeds the COT rate
    snap = _snap([N0], [N0], [[10 * N0]])
    d = SlotDecision(0, Mode.COT, (1,), {0: 1.0, 1: 1.0})
    assert rate_v2v(1.0, 10 * N0, LINK) > rate_cot(1.0, N0, [(1.0, N0)], LINK)
    assert decode_constraint_ok(d, snap, LINK)


def test_decode_fails_without_sidelink():
    snap = _snap([N0], [N0], [[0.0]])
    d = SlotDecision(0, Mode.COT, (1,), {0: 1.0, 1: 1.0})
    assert not decode_constraint_ok(d, snap, LINK)
    with pytest.raises(RejectedDecisionError):
        slot_outcome(d, snap, LINK)


def test_slot_outcome_energies():
    dt = slot_outcome(SlotDecision(0, Mode.DT, (), {0: 0.3}), _snap([1e-9], [], []), LINK)
    assert dt.energies == {0: pytest.approx(0.03)}
    snap = _snap([N0], [N0], [[1e3 * N0]])
    cot = slot_outcome(SlotDecision(0, Mode.COT, (1,), {0: 0.2, 1: 0.3}), snap, LINK)
    assert cot.energies[0] == pytest.approx(0.01)
    assert cot.energies[1] == pytest.approx(0.015)
    assert cot.bits[0] == pytest.approx(0.5 * 0.1 * rate_cot(0.2, N0, [(0.3, N0)], LINK))
    assert slot_outcome(IDLE, snap, LINK) == SlotOutcome()


def test_update_progress_clamps():
    Q = 100.0
    assert update_progress({0: 0.0}, SlotOutcome({0: 50.0}), Q) == {0: 50.0}
    assert update_progress({0: 90.0}, SlotOutcome({0: 30.0}), Q) == {0: 100.0}
    assert update_progress({0: 7.0}, SlotOutcome(), Q) == {0: 7.0}


def test_compute_cost_examples():
    t, e = compute_cost(ComputeModel(flops_per_sample=1e9, batch_size=1, energy_coeff=1e-28), 1e9)
    assert t == pytest.approx(1.0)
    assert e == pytest.approx(0.1)
    with pytest.raises(ConfigurationError):
        compute_cost(ComputeModel(), 0.0)


def test_validate_rejects_bad_power():
    with pytest.raises(RejectedDecisionError):
        SlotDecision(0, Mode.DT, (), {0: 0.5}).validate({0: 0.3})
    with pytest.raises(RejectedDecisionError):
        SlotDecision(0, Mode.DT, (1,), {0: 0.1}).validate({0: 0.3})
    with pytest.raises(RejectedDecisionError):
        SlotDecision(0, Mode.DT, (), {0: 0.1, 5: 0.1}).validate({0: 0.3, 5: 0.3})
