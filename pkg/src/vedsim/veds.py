"""Online scheduler: sigmoid progress weights, virtual energy queues and the slot loop.

Energies enter the drift-plus-penalty objective in units of
``VedsParams.energy_unit`` joules. Queues are stored in joules; the price
charged per joule in a slot is ``q / energy_unit**2``, which is the same as
running the textbook recursion on queues measured in that unit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .comm import LinkBudgetParams, SlotDecision, SlotOutcome, slot_outcome, update_progress
from .errors import ParameterError, RejectedDecisionError
from .solver import SlotProblem, solve_slot_problem


def sigma(zeta, alpha: float, Q: float):
    """Shifted sigmoid; 0.5 at zeta = Q."""
    z = np.asarray(zeta, dtype=float)
    out = 1.0 / (1.0 + np.exp(-alpha * (z - Q) / Q))
    return float(out) if out.ndim == 0 else out


def dsigma(zeta, alpha: float, Q: float):
    s = np.asarray(sigma(zeta, alpha, Q))
    out = alpha * s * (1.0 - s) / Q
    return float(out) if out.ndim == 0 else out


def psi(alpha: float) -> float:
    """Ratio of the sigmoid slope at zero progress to the slope at Q."""
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    s0 = 1.0 / (1.0 + math.exp(alpha))
    return 4.0 * s0 * (1.0 - s0)


@dataclass(frozen=True)
class VedsParams:
    V: float = 0.2
    alpha: float = 2.0
    Q: float = 3e8
    T_k: int = 2357
    energy_unit: float = 0.1
    allow_cot: bool = True
    link: LinkBudgetParams = LinkBudgetParams()

    def __post_init__(self):
        if self.V <= 0 or self.alpha <= 0 or self.Q <= 0:
            raise ParameterError("V, alpha and Q must be positive")
        if self.T_k < 0 or self.energy_unit <= 0:
            raise ParameterError("T_k must be >= 0 and energy_unit > 0")

    @property
    def kappa(self) -> float:
        return self.link.slot_length


@dataclass(frozen=True)
class SovProfile:
    id: int
    budget: float
    p_max: float = 0.3
    t_cp: float = 0.0
    e_cp: float = 0.0


@dataclass(frozen=True)
class OpvProfile:
    id: int
    budget: float
    p_max: float = 0.3


def first_eligible_slot(t_cp: float, kappa: float) -> int:
    """Smallest 1-based slot t with t_cp <= (t-1)*kappa."""
    return int(math.ceil(t_cp / kappa - 1e-9)) + 1


@dataclass(frozen=True)
class SchedulerState:
    q_sov: Mapping[int, float]
    q_opv: Mapping[int, float]
    zeta: Mapping[int, float]
    t: int = 1
    compute_done_slot: Mapping[int, int] = field(default_factory=dict)


def initial_state(sov_profiles: Sequence[SovProfile], opv_profiles: Sequence[OpvProfile],
                  params: VedsParams) -> SchedulerState:
    return SchedulerState(
        q_sov={s.id: 0.0 for s in sov_profiles},
        q_opv={o.id: 0.0 for o in opv_profiles},
        zeta={s.id: 0.0 for s in sov_profiles},
        t=1,
        compute_done_slot={s.id: first_eligible_slot(s.t_cp, params.kappa) for s in sov_profiles},
    )


def update_queues(state: SchedulerState, outcome: SlotOutcome, budgets: Mapping[int, float],
                  e_cp: Mapping[int, float], T_k: int) -> SchedulerState:
    """One step of both queue recursions; SOV budgets are net of computation energy."""
    if T_k <= 0:
        raise ParameterError("T_k must be positive")
    q_sov = {m: max(q + outcome.energies.get(m, 0.0) - (budgets[m] - e_cp.get(m, 0.0)) / T_k, 0.0)
             for m, q in state.q_sov.items()}
    q_opv = {n: max(q + outcome.energies.get(n, 0.0) - budgets[n] / T_k, 0.0)
             for n, q in state.q_opv.items()}
    return replace(state, q_sov=q_sov, q_opv=q_opv, t=state.t + 1)


def is_eligible(state: SchedulerState, m: int, Q: float) -> bool:
    return state.t >= state.compute_done_slot.get(m, 1) and state.zeta[m] < Q


def build_slot_problem(snapshot, state: SchedulerState, params: VedsParams,
                       sov_profiles: Sequence[SovProfile] = None,
                       opv_profiles: Sequence[OpvProfile] = None) -> SlotProblem:
    sov_ids = tuple(snapshot.sov_ids)
    opv_ids = tuple(snapshot.opv_ids)
    pm_s = {s.id: s.p_max for s in (sov_profiles or ())}
    pm_o = {o.id: o.p_max for o in (opv_profiles or ())}
    zeta = np.array([state.zeta[m] for m in sov_ids], dtype=float)
    scale = 1.0 / params.energy_unit ** 2
    return SlotProblem(
        sov_ids=sov_ids,
        opv_ids=opv_ids,
        v2i=np.asarray(snapshot.v2i, dtype=float),
        opv2i=np.asarray(snapshot.opv2i, dtype=float),
        v2v=np.asarray(snapshot.v2v, dtype=float).reshape(len(sov_ids), len(opv_ids)),
        weight=params.V * np.atleast_1d(dsigma(zeta, params.alpha, params.Q)) if len(zeta) else np.zeros(0),
        price_sov=np.array([state.q_sov[m] for m in sov_ids], dtype=float) * scale,
        price_opv=np.array([state.q_opv[n] for n in opv_ids], dtype=float) * scale,
        p_max_sov=np.array([pm_s.get(m, 0.3) for m in sov_ids], dtype=float),
        p_max_opv=np.array([pm_o.get(n, 0.3) for n in opv_ids], dtype=float),
        eligible=np.array([is_eligible(state, m, params.Q) for m in sov_ids], dtype=bool),
        params=params.link,
    )


def slot_objective(decision: SlotDecision, snapshot, state: SchedulerState, params: VedsParams) -> float:
    """Per-slot drift-plus-penalty value of a decision."""
    out = slot_outcome(decision, snapshot, params.link)
    scale = 1.0 / params.energy_unit ** 2
    gain = sum(z * params.V * dsigma(state.zeta[m], params.alpha, params.Q) for m, z in out.bits.items())
    cost = 0.0
    for vid, e in out.energies.items():
        q = state.q_sov[vid] if vid in state.q_sov else state.q_opv[vid]
        cost += q * scale * e
    return float(gain - cost)


def solve_slot(snapshot, state: SchedulerState, params: VedsParams,
               sov_profiles: Sequence[SovProfile] = None,
               opv_profiles: Sequence[OpvProfile] = None) -> SlotDecision:
    """Best slot decision: DT closed form and COT over relay prefixes per eligible SOV."""
    problem = build_slot_problem(snapshot, state, params, sov_profiles, opv_profiles)
    decision, _ = solve_slot_problem(problem, allow_cot=params.allow_cot)
    return decision


@dataclass
class RoundTrace:
    sov_ids: tuple
    opv_ids: tuple
    Q: float
    alpha: float
    V: float
    energy_unit: float
    T_k: int
    sov_budget: np.ndarray
    opv_budget: np.ndarray
    e_cp: np.ndarray
    bits: np.ndarray          # (T, S)
    sov_energy: np.ndarray    # (T, S) communication energy
    opv_energy: np.ndarray    # (T, U)
    zeta: np.ndarray          # (T+1, S), row t is the value before slot t+1
    q_sov: np.ndarray         # (T+1, S)
    q_opv: np.ndarray         # (T+1, U)
    objective: np.ndarray     # (T,)
    decisions: list = field(default_factory=list)
    ever_covered: Optional[np.ndarray] = None

    @property
    def n_slots(self) -> int:
        return len(self.bits)

    def total_sov_energy(self, include_compute: bool = True) -> np.ndarray:
        tot = self.sov_energy.sum(axis=0)
        return tot + self.e_cp if include_compute else tot

    def total_opv_energy(self) -> np.ndarray:
        return self.opv_energy.sum(axis=0)

    def total_energy(self) -> float:
        return float(self.sov_energy.sum() + self.opv_energy.sum())

    def budget_ratio(self) -> np.ndarray:
        """Spent / budget per vehicle (SOVs first); SOVs include computation energy."""
        spent = np.concatenate([self.total_sov_energy(), self.total_opv_energy()])
        budget = np.concatenate([self.sov_budget, self.opv_budget])
        return spent / budget

    def final_zeta(self) -> np.ndarray:
        return self.zeta[-1]


def success_count(trace: RoundTrace, Q: Optional[float] = None) -> int:
    """Number of SOVs whose delivered bits reach the model size."""
    Q = trace.Q if Q is None else Q
    if trace.n_slots == 0:
        return 0
    return int(np.sum(trace.bits.sum(axis=0) >= Q))


Policy = Callable[[object, SchedulerState, VedsParams, Sequence[SovProfile], Sequence[OpvProfile]], SlotDecision]


def run_slots(snapshot_at: Callable[[int], object], sov_profiles: Sequence[SovProfile],
              opv_profiles: Sequence[OpvProfile], params: VedsParams,
              policy: Policy = solve_slot, check: bool = True) -> RoundTrace:
    """Drive ``params.T_k`` slots; ``snapshot_at(t)`` returns the channel of 1-based slot t."""
    T = params.T_k
    S, U = len(sov_profiles), len(opv_profiles)
    sov_ids = tuple(s.id for s in sov_profiles)
    opv_ids = tuple(o.id for o in opv_profiles)
    budgets = {s.id: s.budget for s in sov_profiles}
    budgets.update({o.id: o.budget for o in opv_profiles})
    e_cp = {s.id: s.e_cp for s in sov_profiles}
    p_max = {s.id: s.p_max for s in sov_profiles}
    p_max.update({o.id: o.p_max for o in opv_profiles})
    sidx = {m: i for i, m in enumerate(sov_ids)}
    oidx = {n: j for j, n in enumerate(opv_ids)}

    bits = np.zeros((T, S))
    e_s = np.zeros((T, S))
    e_o = np.zeros((T, U))
    zeta = np.zeros((T + 1, S))
    q_s = np.zeros((T + 1, S))
    q_o = np.zeros((T + 1, U))
    obj = np.zeros(T)
    decisions = []

    state = initial_state(sov_profiles, opv_profiles, params)
    for t in range(1, T + 1):
        snap = snapshot_at(t)
        decision = policy(snap, state, params, sov_profiles, opv_profiles)
        if check:
            decision.validate(p_max)
            if not decision.idle and not is_eligible(state, decision.scheduled_sov, params.Q):
                raise RejectedDecisionError(f"SOV {decision.scheduled_sov} is not eligible in slot {t}")
        obj[t - 1] = slot_objective(decision, snap, state, params) if not decision.idle else 0.0
        out = slot_outcome(decision, snap, params.link)
        for m, z in out.bits.items():
            bits[t - 1, sidx[m]] = z
        for vid, e in out.energies.items():
            if vid in sidx:
                e_s[t - 1, sidx[vid]] = e
            else:
                e_o[t - 1, oidx[vid]] = e
        state = update_queues(state, out, budgets, e_cp, T)
        state = replace(state, zeta=update_progress(state.zeta, out, params.Q))
        zeta[t] = [state.zeta[m] for m in sov_ids]
        q_s[t] = [state.q_sov[m] for m in sov_ids]
        q_o[t] = [state.q_opv[n] for n in opv_ids]
        decisions.append(decision)

    return RoundTrace(
        sov_ids=sov_ids, opv_ids=opv_ids, Q=params.Q, alpha=params.alpha, V=params.V,
        energy_unit=params.energy_unit, T_k=T,
        sov_budget=np.array([s.budget for s in sov_profiles], dtype=float),
        opv_budget=np.array([o.budget for o in opv_profiles], dtype=float),
        e_cp=np.array([s.e_cp for s in sov_profiles], dtype=float),
        bits=bits, sov_energy=e_s, opv_energy=e_o, zeta=zeta, q_sov=q_s, q_opv=q_o,
        objective=obj, decisions=decisions,
    )


def run_round(scenario, sov_profiles: Sequence[SovProfile], opv_profiles: Sequence[OpvProfile],
              params: VedsParams, channel_config, rngs: Mapping[str, np.random.Generator],
              policy: Policy = solve_slot, check: bool = True):
    """One training round on a moving scenario.

    Each slot draws a channel snapshot at the current positions, schedules,
    then advances mobility by one slot. Returns (trace, final scenario).
    """
    from .channel import snapshot as draw_snapshot

    from .scenario import HEADING_NAMES, advance

    sov_ids = [s.id for s in sov_profiles]
    opv_ids = [o.id for o in opv_profiles]
    net = scenario.network
    index = {v.id: i for i, v in enumerate(scenario.vehicles)}
    pos = scenario.positions()
    heading = np.array([HEADING_NAMES.index(v.heading) for v in scenario.vehicles], dtype=int)
    speed = np.array([v.speed for v in scenario.vehicles], dtype=float)
    sidx = np.array([index[m] for m in sov_ids], dtype=int)
    rsu = np.asarray(net.rsu_position, dtype=float)
    covered = np.zeros(len(sov_ids), dtype=bool)
    holder = {"pos": pos, "heading": heading}

    def snapshot_at(t):
        if t > 1:
            holder["pos"], holder["heading"] = advance(holder["pos"], holder["heading"], speed, net,
                                                       params.kappa, rngs["mobility"])
        p = holder["pos"]
        if len(sidx):
            covered[:] |= np.hypot(*(p[sidx] - rsu).T) <= net.rsu_radius
        return draw_snapshot(scenario, sov_ids, opv_ids, rngs["channel"], channel_config, slot=t,
                             positions=p)

    trace = run_slots(snapshot_at, sov_profiles, opv_profiles, params, policy, check)
    # the round occupies T_k slots of wall time even if mobility was only sampled T_k - 1 times
    if params.T_k > 0:
        holder["pos"], holder["heading"] = advance(holder["pos"], holder["heading"], speed, net,
                                                   params.kappa, rngs["mobility"])
    vehicles = tuple(replace(v, position=(float(p[0]), float(p[1])), heading=HEADING_NAMES[h])
                     for v, p, h in zip(scenario.vehicles, holder["pos"], holder["heading"]))
    final = replace(scenario, vehicles=vehicles, time=scenario.time + params.T_k * params.kappa)
    trace.ever_covered = covered
    return trace, final


@dataclass
class BoundReport:
    Phi: float
    psi_alpha: float
    sigma_gap_bound: float
    energy_overshoot_bound: float
    measured_sigma_sum: float
    measured_energies: dict
    energy_bounds: dict = field(default_factory=dict)


def per_slot_deviation(trace: RoundTrace) -> np.ndarray:
    """|delta| per slot and vehicle (SOVs first) in joules."""
    T = trace.n_slots
    if T == 0:
        return np.zeros((0, len(trace.sov_ids) + len(trace.opv_ids)))
    d_s = trace.sov_energy - (trace.sov_budget - trace.e_cp)[None, :] / trace.T_k
    d_o = trace.opv_energy - trace.opv_budget[None, :] / trace.T_k
    return np.abs(np.concatenate([d_s, d_o], axis=1))


def trace_phi(trace: RoundTrace) -> float:
    dev = per_slot_deviation(trace)
    if dev.size == 0:
        return 0.0
    return float(np.sum(dev.max(axis=0) ** 2))


def weighted_bits(bits: np.ndarray, zeta: np.ndarray, alpha: float, Q: float) -> float:
    """sum_t sum_m bits[t, m] * dsigma(zeta[t, m]); zeta row t is the progress before slot t."""
    if len(bits) == 0:
        return 0.0
    return float(np.sum(np.asarray(bits) * dsigma(np.asarray(zeta)[: len(bits)], alpha, Q)))


def online_gap_report(trace: RoundTrace, offline_sigma_weighted_sum: Optional[float] = None,
                      params: Optional[VedsParams] = None, phi_traces: Sequence[RoundTrace] = ()) -> BoundReport:
    """Sigma-gap and per-vehicle energy bounds for a finished round.

    ``Phi`` is the sum over vehicles of the squared worst per-slot deviation
    from the per-slot budget. Extra traces (e.g. the offline schedule) can be
    passed in ``phi_traces``; each vehicle then uses its worst deviation over
    all of them. Energies are expressed in ``energy_unit`` inside the bound
    and converted back to joules.
    """
    V = trace.V if params is None else params.V
    alpha = trace.alpha if params is None else params.alpha
    unit = trace.energy_unit if params is None else params.energy_unit
    T = trace.T_k
    devs = [per_slot_deviation(trace)] + [per_slot_deviation(tr) for tr in phi_traces]
    worst = np.zeros(len(trace.sov_ids) + len(trace.opv_ids))
    for d in devs:
        if d.size:
            worst = np.maximum(worst, d.max(axis=0))
    Phi = float(np.sum(worst ** 2))
    Phi_u = Phi / unit ** 2
    ps = psi(alpha)
    gap = T ** 2 * Phi_u / (V * ps) if T > 0 else 0.0
    overshoot = math.nan
    bounds = {}
    if offline_sigma_weighted_sum is not None:
        arg = 2 * T ** 2 * Phi_u - 2 * V * offline_sigma_weighted_sum
        overshoot = unit * math.sqrt(arg) if arg >= 0 else math.nan
        budgets = np.concatenate([trace.sov_budget, trace.opv_budget])
        for vid, b in zip(trace.sov_ids + trace.opv_ids, budgets):
            bounds[vid] = float(b + overshoot)
    measured = {}
    if trace.n_slots:
        for vid, e in zip(trace.sov_ids, trace.total_sov_energy()):
            measured[vid] = float(e)
        for vid, e in zip(trace.opv_ids, trace.total_opv_energy()):
            measured[vid] = float(e)
    sig = float(np.sum(sigma(trace.zeta[-1], alpha, trace.Q))) if len(trace.sov_ids) else 0.0
    return BoundReport(Phi, ps, gap, overshoot, sig, measured, bounds)
