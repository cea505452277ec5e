"""Oracle suites behind ``vedsim verify``.

Each suite draws random instances, checks a solver against an independent
oracle and reports a margin (positive means the check passed with room).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, List

import numpy as np

from .channel import ChannelConfig, ChannelSnapshot, LosClass, link_losses
from .comm import LinkBudgetParams
from .flsim import ModelState, build_problem, descent_bound, run_training, gap_bound, training_round
from .scenario import HEADING_NAMES, advance, build_network
from .solver import (CotSubproblem, DtSubproblem, RelayTerm, SlotProblem, TinyInstance,
                     best_subset_exhaustive, grid_search_cot, grid_search_dt, kkt_residual,
                     max_violation, offline_optimal, solve_cot, solve_dt)
from . import veds


@dataclass
class SuiteResult:
    name: str
    passed: bool
    margin: float
    detail: str
    seconds: float = 0.0
    cases: int = 0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name:<18} cases={self.cases:<5} margin={self.margin:+.3e} {self.seconds:6.1f}s  {self.detail}"


def _timed(name, fn, *args, **kw) -> SuiteResult:
    t0 = time.perf_counter()
    res = fn(*args, **kw)
    res.name = name
    res.seconds = time.perf_counter() - t0
    return res


# ---------------------------------------------------------------- instance generators

def _log_uniform(rng, lo, hi, size=None):
    return 10.0 ** rng.uniform(math.log10(lo), math.log10(hi), size)


def random_weight(rng, link: LinkBudgetParams = LinkBudgetParams()) -> float:
    """Per-bit weight giving a slot objective of order one (log-uniform over two decades)."""
    return float(_log_uniform(rng, 0.1, 10.0) / (link.slot_length * link.bandwidth))


def _price(rng, w, link, zero_prob=0.1):
    if rng.random() < zero_prob:
        return 0.0
    return float(w * link.bandwidth * _log_uniform(rng, 0.1, 100.0))


def random_dt_subproblem(rng, link: LinkBudgetParams = LinkBudgetParams()) -> DtSubproblem:
    w = random_weight(rng, link)
    gain = float(_log_uniform(rng, 0.1, 1e5)) * link.noise_power
    return DtSubproblem(w, gain, _price(rng, w, link), float(rng.uniform(0.05, 0.3)), link)


def random_cot_subproblem(rng, n_relays: int, link: LinkBudgetParams = LinkBudgetParams()) -> CotSubproblem:
    w = random_weight(rng, link)
    n0 = link.noise_power
    rel = [RelayTerm(float(_log_uniform(rng, 1.0, 1e4)) * n0, float(_log_uniform(rng, 10.0, 1e5)) * n0,
                     _price(rng, w, link), float(rng.uniform(0.05, 0.3))) for _ in range(n_relays)]
    rel = tuple(sorted(rel, key=lambda r: -r.gain_mn))
    gain_mr = 0.0 if rng.random() < 0.1 else float(_log_uniform(rng, 0.1, 1e4)) * n0
    return CotSubproblem(w, gain_mr, _price(rng, w, link), float(rng.uniform(0.05, 0.3)), rel, link)


def random_slot_problem(rng, n_sov: int, n_opv: int, link: LinkBudgetParams = LinkBudgetParams()) -> SlotProblem:
    n0 = link.noise_power
    w = np.array([random_weight(rng, link) for _ in range(n_sov)])
    return SlotProblem(
        sov_ids=tuple(range(n_sov)), opv_ids=tuple(range(n_sov, n_sov + n_opv)),
        v2i=_log_uniform(rng, 0.1, 1e4, n_sov) * n0,
        opv2i=_log_uniform(rng, 1.0, 1e4, n_opv) * n0,
        v2v=_log_uniform(rng, 10.0, 1e5, (n_sov, n_opv)) * n0,
        weight=w,
        price_sov=np.array([_price(rng, x, link) for x in w]),
        price_opv=np.array([_price(rng, w.mean(), link) for _ in range(n_opv)]),
        p_max_sov=rng.uniform(0.05, 0.3, n_sov), p_max_opv=rng.uniform(0.05, 0.3, n_opv),
        eligible=np.ones(n_sov, dtype=bool), params=link)


def random_tiny_instance(rng, T: int = 6, S: int = 2, U: int = 2, Q: float = 1e7, alpha: float = 2.0,
                         link: LinkBudgetParams = LinkBudgetParams()) -> TinyInstance:
    """Frozen channel trace with budgets tight enough to bind within T slots."""
    n0 = link.noise_power
    return TinyInstance(
        v2i=_log_uniform(rng, 1.0, 1e4, (T, S)) * n0,
        opv2i=_log_uniform(rng, 10.0, 1e5, (T, U)) * n0,
        v2v=_log_uniform(rng, 100.0, 1e6, (T, S, U)) * n0,
        sov_budget=rng.uniform(0.006, 0.02, S), opv_budget=rng.uniform(0.003, 0.01, U),
        e_cp=rng.uniform(0.0, 0.002, S), t_cp=rng.uniform(0.0, 2 * link.slot_length, S),
        Q=Q, alpha=alpha, params=link)


# ---------------------------------------------------------------- tiny-instance plumbing

def tiny_snapshots(inst: TinyInstance) -> Callable[[int], ChannelSnapshot]:
    S, U = inst.v2i.shape[1], inst.opv2i.shape[1]
    sov_ids, opv_ids = tuple(range(S)), tuple(range(S, S + U))

    def at(t):
        return ChannelSnapshot(t, sov_ids, opv_ids, inst.v2i[t - 1], inst.opv2i[t - 1], inst.v2v[t - 1],
                               np.zeros(S, int), np.zeros(U, int), np.zeros((S, U), int))
    return at


def tiny_profiles(inst: TinyInstance, p_max: float = 0.3):
    S, U = inst.v2i.shape[1], inst.opv2i.shape[1]
    sp = [veds.SovProfile(m, float(inst.sov_budget[m]), p_max, float(inst.t_cp[m]), float(inst.e_cp[m]))
          for m in range(S)]
    op = [veds.OpvProfile(S + n, float(inst.opv_budget[n]), p_max) for n in range(U)]
    return sp, op


def run_tiny(inst: TinyInstance, V: float = 0.2, energy_unit: float = 0.01):
    """Online VEDS on the frozen trace plus the offline optimum and the bound report."""
    sp, op = tiny_profiles(inst)
    params = veds.VedsParams(V=V, alpha=inst.alpha, Q=inst.Q, T_k=inst.T, energy_unit=energy_unit,
                             link=inst.params)
    trace = veds.run_slots(tiny_snapshots(inst), sp, op, params)
    off = offline_optimal(inst)
    off_trace = replace(trace, bits=off.bits, sov_energy=off.sov_energy, opv_energy=off.opv_energy)
    rep = veds.online_gap_report(trace, off.sigma_weighted_sum, params, phi_traces=[off_trace])
    return trace, off, rep


# ---------------------------------------------------------------- suites

def suite_dsigma(rng, n: int = 200, Q: float = 3e8) -> SuiteResult:
    """Finite-difference check of the sigmoid slope; guards against sign and scale slips."""
    worst = 0.0
    for _ in range(n):
        alpha = float(_log_uniform(rng, 0.05, 20.0))
        z = float(rng.uniform(0, Q))
        h = Q * 1e-6
        fd = (veds.sigma(z + h, alpha, Q) - veds.sigma(z - h, alpha, Q)) / (2 * h)
        d = veds.dsigma(z, alpha, Q)
        worst = max(worst, abs(d - fd) / abs(fd))
    return SuiteResult("", worst <= 1e-6, 1e-6 - worst, f"max rel err {worst:.2e}", cases=n)


def suite_dt_closed_form(rng, n: int = 1000, step: float = 1e-4, tol: float = 1e-6) -> SuiteResult:
    """Closed-form DT power against a uniform power grid."""
    canary = suite_dsigma(rng, 20)
    worst = math.inf
    for _ in range(n):
        sub = random_dt_subproblem(rng)
        closed = solve_dt(sub).objective
        _, grid = grid_search_dt(sub, step)
        worst = min(worst, closed - grid + tol)
    ok = worst >= 0 and canary.passed
    return SuiteResult("", ok, worst, f"min(closed - grid + tol); dsigma canary {'ok' if canary.passed else 'FAILED'}",
                       cases=n)


def suite_relay_prefix(rng, n: int = 200, max_opv: int = 8, tol: float = 1e-6) -> SuiteResult:
    """Exhaustive relay subsets never beat the best prefix of the gain ordering."""
    worst = math.inf
    for _ in range(n):
        prob = random_slot_problem(rng, int(rng.integers(1, 3)), int(rng.integers(1, max_opv + 1)))
        for i in range(len(prob.sov_ids)):
            best_any, best_prefix = best_subset_exhaustive(prob, i)
            rel = (best_any - best_prefix) / max(1.0, abs(best_prefix))
            worst = min(worst, tol - rel)
    return SuiteResult("", worst >= 0, worst, "min(tol - relative subset advantage)", cases=n)


def suite_cot_barrier(rng, n: int = 200, kkt_tol: float = 1e-6, feas_tol: float = 1e-9, obj_tol: float = 1e-4) -> SuiteResult:
    """Barrier solver: KKT residual, feasibility and agreement with the grid oracle."""
    m_kkt = m_feas = m_obj = math.inf
    for _ in range(n):
        sub = random_cot_subproblem(rng, int(rng.integers(1, 3)))
        res = solve_cot(sub)
        _, grid = grid_search_cot(sub)
        m_kkt = min(m_kkt, kkt_tol - kkt_residual(sub, res.powers))
        m_feas = min(m_feas, feas_tol - max_violation(sub, res.powers))
        m_obj = min(m_obj, obj_tol - abs(res.objective - grid))
    ok = min(m_kkt, m_feas, m_obj) >= 0
    return SuiteResult("", ok, min(m_kkt / kkt_tol, m_feas / feas_tol, m_obj / obj_tol),
                       f"kkt {m_kkt:+.2e} feas {m_feas:+.2e} obj {m_obj:+.2e}", cases=n)


def suite_online_gap(rng, n: int = 20, V: float = 0.2) -> SuiteResult:
    """Online VEDS against the exhaustive offline optimum on frozen tiny traces."""
    m_gap = m_energy = math.inf
    for _ in range(n):
        inst = random_tiny_instance(rng)
        trace, off, rep = run_tiny(inst, V=V)
        m_gap = min(m_gap, rep.sigma_gap_bound - (off.sigma_sum - rep.measured_sigma_sum))
        for vid, e in rep.measured_energies.items():
            bound = rep.energy_bounds.get(vid, math.nan)
            m_energy = min(m_energy, bound - e if math.isfinite(bound) else -math.inf)
    ok = m_gap >= 0 and m_energy >= 0
    return SuiteResult("", ok, min(m_gap, m_energy), f"sigma-gap margin {m_gap:.3g}, energy margin {m_energy:.3g} J",
                       cases=n)


def suite_descent(rng, n: int = 200, eta: float = 0.1, B: int = 32, pool: int = 40) -> SuiteResult:
    """Mean one-round loss change against the one-round bound (+2 standard errors).

    Every case is its own seed: fresh problem, fresh start point, one round.
    """
    d, b = [], []
    for _ in range(n):
        sub = np.random.default_rng(rng.integers(2 ** 63))
        prob = build_problem(range(pool), sub, batch_size=B)
        w = ModelState(sub.standard_normal(prob.dimension))
        ok = sub.choice(pool, int(sub.integers(1, 9)), replace=False)
        _, rec = training_round(w, ok, prob, eta, B, sub)
        d.append(rec.loss_after - rec.loss_before)
        b.append(descent_bound(rec, prob))
    d = np.asarray(d)
    margin = float(np.mean(b) + 2 * d.std(ddof=1) / math.sqrt(n) - d.mean())
    return SuiteResult("", margin >= 0, margin, f"mean dF {d.mean():.4f} vs bound {np.mean(b):.4f}", cases=n)


def suite_convergence(rng, n: int = 20, K: int = 50, eta: float = 0.1, B: int = 32, pool: int = 40) -> SuiteResult:
    """Mean final optimality gap after K rounds against the K-round bound (+2 s.e.), one problem per seed."""
    g, b = [], []
    for _ in range(n):
        sub = np.random.default_rng(rng.integers(2 ** 63))
        prob = build_problem(range(pool), sub, batch_size=B)
        w0 = np.zeros(prob.dimension)
        gap0 = prob.loss(w0) - prob.optimal_loss()
        sets = [sub.choice(pool, int(sub.integers(0, 9)), replace=False) for _ in range(K)]
        w, hist = run_training(prob, w0, sets, eta, B, sub)
        g.append(prob.loss(w.weights) - prob.optimal_loss())
        b.append(gap_bound(hist, prob, gap0))
    g = np.asarray(g)
    margin = float(np.mean(b) + 2 * g.std(ddof=1) / math.sqrt(n) - g.mean())
    return SuiteResult("", margin >= 0, margin, f"mean gap {g.mean():.4f} vs bound {np.mean(b):.4f}", cases=n)


def suite_channel_stats(rng, n: int = 100_000) -> SuiteResult:
    """Shadowing spread, blockage mean and intersection turn frequencies from large samples."""
    cfg = ChannelConfig()
    d = np.full(n, 100.0)
    los = link_losses(d, np.full(n, int(LosClass.LOS)), np.zeros(n, int), cfg, rng) - \
        link_losses(d, np.full(n, int(LosClass.LOS)), np.zeros(n, int), replace(cfg, shadowing=False), rng)
    blk = link_losses(d, np.full(n, int(LosClass.NLOSV)), np.ones(n, int), replace(cfg, shadowing=False), rng) - \
        link_losses(d, np.full(n, int(LosClass.NLOSV)), np.zeros(n, int), replace(cfg, shadowing=False), rng)
    e_std = abs(los.std() - cfg.shadow_std_los_db)
    # E[max(X, 0)] for X ~ N(5, 2): 5*Phi(2.5) + 2*phi(2.5)
    from scipy.stats import norm
    want = 5 * norm.cdf(2.5) + 2 * norm.pdf(2.5)
    e_blk = abs(blk.mean() - want)
    net = build_network(3, 3, 250.0, 300.0)
    pos = np.tile([[net.road_xs[1] - 0.5, net.road_ys[1]]], (n, 1))
    hd = np.full(n, HEADING_NAMES.index("E"))
    _, new = advance(pos, hd, np.full(n, 10.0), net, 0.1, rng)
    freq = np.array([np.mean(new == HEADING_NAMES.index(h)) for h in ("E", "N", "S")])
    e_turn = float(np.abs(freq - [0.5, 0.25, 0.25]).max())
    margin = min(0.05 - e_std, 0.03 - e_blk, 0.01 - e_turn)
    return SuiteResult("", margin >= 0, margin,
                       f"shadow std err {e_std:.3f} dB, blockage mean err {e_blk:.3f} dB, turn err {e_turn:.4f}",
                       cases=n)


FAST = dict(dt=200, prefix=40, cot=30, online=5, descent=200, convergence=20)
FULL = dict(dt=1000, prefix=200, cot=200, online=20, descent=400, convergence=20)
SUITES = (
    ("dsigma", suite_dsigma, None),
    ("dt-closed-form", suite_dt_closed_form, "dt"),
    ("relay-prefix", suite_relay_prefix, "prefix"),
    ("cot-barrier", suite_cot_barrier, "cot"),
    ("online-gap", suite_online_gap, "online"),
    ("descent", suite_descent, "descent"),
    ("convergence", suite_convergence, "convergence"),
)


def run_suites(level: str = "fast", seed: int = 0) -> List[SuiteResult]:
    counts = FAST if level == "fast" else FULL
    out = []
    for i, (name, fn, key) in enumerate(SUITES):
        rng = np.random.default_rng([seed, i])
        out.append(_timed(name, fn, rng) if key is None else _timed(name, fn, rng, counts[key]))
    if level == "full":
        out.append(_timed("channel-stats", suite_channel_stats, np.random.default_rng([seed, len(SUITES)])))
    return out
