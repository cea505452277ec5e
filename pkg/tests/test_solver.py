import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vedsim.comm import LinkBudgetParams
from vedsim.errors import ParameterError
from vedsim.solver import (CotSubproblem, DtSubproblem, RelayTerm, best_subset_exhaustive, brute_force_problem,
                           cot_objective, grid_search_cot, grid_search_dt, kkt_residual, max_violation,
                           offline_optimal, solve_cot, solve_cot_exact, solve_dt, solve_slot_problem)
from vedsim.veds import sigma
from vedsim.verify import random_cot_subproblem, random_dt_subproblem, random_slot_problem, random_tiny_instance

LINK = LinkBudgetParams(slot_length=0.02)
N0 = LINK.noise_power
LN2 = math.log(2.0)


def _dt(interior_term, noise_term, p_max=0.3, q=1.0):
    # weight chosen so that weight*beta/(q ln2) equals interior_term
    w = interior_term * q * LN2 / LINK.bandwidth
    return DtSubproblem(w, N0 / noise_term, q, p_max, LINK)


def test_dt_interior_example():
    sub = _dt(0.15, 0.05)
    res = solve_dt(sub)
    assert res.powers[0] == pytest.approx(0.10)
    p_grid, v_grid = grid_search_dt(sub, 1e-4)
    assert float(np.ravel(p_grid)[0]) == pytest.approx(0.10, abs=1e-4)
    assert res.objective >= v_grid - 1e-12


def test_dt_clamps():
    assert solve_dt(_dt(0.03, 0.05)).powers[0] == 0.0
    assert solve_dt(_dt(0.55, 0.05)).powers[0] == 0.3


def test_dt_degenerate_cases():
    assert solve_dt(DtSubproblem(1e-8, 1e-9, 0.0, 0.3, LINK)).powers[0] == 0.3
    assert solve_dt(DtSubproblem(1e-8, 0.0, 1.0, 0.3, LINK)).powers[0] == 0.0
    with pytest.raises(ParameterError):
        DtSubproblem(-1.0, 1e-9, 1.0, 0.3, LINK)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_dt_never_beaten_by_grid(seed):
    sub = random_dt_subproblem(np.random.default_rng(seed), LINK)
    _, v = grid_search_dt(sub, 1e-4)
    assert solve_dt(sub).objective >= v - 1e-6


def _cot(q_m, relays, gain_mr=50 * N0, weight=None, p_max=0.3):
    w = weight if weight is not None else 1.0 / (LINK.slot_length * LINK.bandwidth)
    return CotSubproblem(w, gain_mr, q_m, p_max, tuple(relays), LINK)


def test_cot_unconstrained_relay_matches_grid():
    sub = _cot(60.0, [RelayTerm(200 * N0, 1e12 * N0, 150.0, 0.3)])
    res = solve_cot(sub)
    _, v = grid_search_cot(sub, step=1e-3, final_step=1e-3)
    assert abs(res.objective - v) <= 1e-4


def test_cot_zero_queues_push_to_bounds():
    # strong sidelinks: nothing binds but the power caps
    sub = _cot(0.0, [RelayTerm(80 * N0, 1e9 * N0, 0.0, 0.2), RelayTerm(40 * N0, 1e8 * N0, 0.0, 0.25)])
    res = solve_cot(sub)
    np.testing.assert_allclose(res.powers, [0.3, 0.2, 0.25], atol=1e-6)


def test_cot_zero_queues_decode_limited():
    # weak sidelink: relay power stops where the relay can just decode
    a, b, c = 50.0, 1000.0, 1000.0
    sub = _cot(0.0, [RelayTerm(b * N0, c * N0, 0.0, 0.3)], gain_mr=a * N0)
    res = solve_cot(sub)
    x, y = res.powers
    assert x == pytest.approx(0.3, abs=1e-6)
    assert y == pytest.approx((c - a) * 0.3 / b, rel=1e-5)


def test_cot_tight_decode_constraint():
    a, c = 50.0, 120.0
    sub = _cot(5.0, [RelayTerm(3000 * N0, c * N0, 1.0, 0.3)], gain_mr=a * N0)
    res = solve_cot(sub)
    x, y = res.powers
    snr_cot = x * a + y * 3000
    snr_v2v = x * c
    assert snr_cot == pytest.approx(snr_v2v, rel=1e-6)
    assert kkt_residual(sub, res.powers) <= 1e-6


def test_cot_requires_ordered_relays():
    with pytest.raises(ParameterError):
        _cot(1.0, [RelayTerm(N0, 10 * N0, 0.0, 0.3), RelayTerm(N0, 20 * N0, 0.0, 0.3)])
    with pytest.raises(ParameterError):
        _cot(1.0, [])


@pytest.mark.parametrize("seed", range(8))
def test_cot_barrier_agrees_with_exact_and_grid(seed):
    rng = np.random.default_rng(seed)
    for _ in range(5):
        sub = random_cot_subproblem(rng, int(rng.integers(1, 3)), LINK)
        res = solve_cot(sub)
        ex = solve_cot_exact(sub)
        _, g = grid_search_cot(sub)
        assert kkt_residual(sub, res.powers) <= 1e-6
        assert max_violation(sub, res.powers) <= 1e-9
        assert abs(res.objective - g) <= 1e-4
        assert abs(res.objective - ex.objective) <= 1e-5 * max(1.0, abs(ex.objective))


def test_cot_objective_batch_shape():
    sub = _cot(1.0, [RelayTerm(N0, 1e6 * N0, 1.0, 0.3)])
    pts = np.array([[0.1, 0.1], [0.2, 0.0]])
    vals = cot_objective(pts, sub)
    assert vals.shape == (2,)
    assert vals[1] == pytest.approx(cot_objective(pts[1], sub))


@pytest.mark.parametrize("seed", range(10))
def test_best_subset_is_a_prefix(seed):
    prob = random_slot_problem(np.random.default_rng(seed), 2, 6, LINK)
    for i in range(2):
        best_any, best_prefix = best_subset_exhaustive(prob, i)
        assert best_any - best_prefix <= 1e-6 * max(1.0, abs(best_prefix))


def test_empty_slot_problem():
    prob = random_slot_problem(np.random.default_rng(0), 2, 2, LINK)
    prob = replace(prob, eligible=np.zeros(2, bool))
    dec, val = solve_slot_problem(prob)
    assert dec.idle and val == 0.0
    dec, val = brute_force_problem(prob)
    assert dec.idle and val == 0.0


def test_brute_force_agrees_on_dt_only():
    prob = random_slot_problem(np.random.default_rng(3), 2, 0, LINK)
    _, v = solve_slot_problem(prob)
    _, vb = brute_force_problem(prob, 1e-2, 1e-6)
    assert v >= vb - 1e-9
    assert v - vb <= 1e-6 * max(1.0, abs(v))


def test_offline_zero_budget_idles():
    inst = random_tiny_instance(np.random.default_rng(0))
    inst = replace(inst, sov_budget=inst.e_cp.copy(), opv_budget=np.zeros(2))
    off = offline_optimal(inst)
    assert off.sigma_sum == pytest.approx(2 * sigma(0.0, inst.alpha, inst.Q))
    assert np.all(off.bits == 0)


def test_offline_monotone_in_budget():
    inst = random_tiny_instance(np.random.default_rng(1))
    lo = offline_optimal(inst).sigma_sum
    hi = offline_optimal(replace(inst, sov_budget=inst.sov_budget * 2, opv_budget=inst.opv_budget * 2)).sigma_sum
    assert hi >= lo - 1e-12


def test_offline_guard():
    inst = random_tiny_instance(np.random.default_rng(1), T=7)
    with pytest.raises(ParameterError):
        offline_optimal(inst)
