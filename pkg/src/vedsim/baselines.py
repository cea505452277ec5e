"""Reference schedulers: the coverage upper bound, V2I-only and static (SA) scheduling."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .comm import IDLE, LinkBudgetParams, Mode, SlotDecision, rate_dt
from .veds import OpvProfile, SchedulerState, SovProfile, VedsParams, first_eligible_slot, solve_slot


def optimal_upper_bound(sovs: Sequence, ever_covered: Optional[Sequence[bool]] = None) -> int:
    """Every SOV that is inside coverage at some point of the round counts as a success."""
    if ever_covered is None:
        return len(sovs)
    return int(np.sum(np.asarray(ever_covered, dtype=bool)))


def schedule_v2i_only(snapshot, state: SchedulerState, params: VedsParams,
                      sov_profiles: Sequence[SovProfile] = None,
                      opv_profiles: Sequence[OpvProfile] = None) -> SlotDecision:
    """The online scheduler restricted to direct transmission."""
    return solve_slot(snapshot, state, replace(params, allow_cot=False), sov_profiles, opv_profiles)


@dataclass(frozen=True)
class StaticBlock:
    sov: int
    start: int      # first slot (1-based, inclusive)
    length: int
    power: float


def plan_block(gain: float, comm_budget: float, p_max: float, Q: float,
               link: LinkBudgetParams, max_len: int):
    """Shortest block that delivers Q bits when the budget is spread evenly over it.

    Returns (length, power) with the minimal power that still meets Q over
    that length, or None when no block of at most ``max_len`` slots works.
    """
    if gain <= 0 or comm_budget <= 0 or max_len <= 0:
        return None
    k = link.slot_length
    L = np.arange(1, max_len + 1)
    p = np.minimum(p_max, comm_budget / (k * L))
    bits = k * L * rate_dt(p, gain, link)
    ok = np.flatnonzero(bits >= Q)
    if len(ok) == 0:
        return None
    length = int(L[ok[0]])
    need = (2.0 ** (Q / (length * k * link.bandwidth)) - 1.0) * link.noise_power / gain
    return length, float(min(need, p[ok[0]]))


def schedule_static(snapshot, sov_profiles: Sequence[SovProfile], params: VedsParams) -> list:
    """Plan contiguous DT blocks from the round-start channel.

    SOVs are served in descending order of their initial V2I gain; each
    block starts once the previous one ends and the SOV has finished local
    training. An SOV whose block would overrun the round is skipped.
    """
    gains = {m: float(g) for m, g in zip(snapshot.sov_ids, snapshot.v2i)}
    order = sorted(sov_profiles, key=lambda s: (-gains.get(s.id, 0.0), s.id))
    plan, free = [], 1
    for s in order:
        start = max(free, first_eligible_slot(s.t_cp, params.kappa))
        room = params.T_k - start + 1
        blk = plan_block(gains.get(s.id, 0.0), s.budget - s.e_cp, s.p_max, params.Q, params.link, room)
        if blk is None:
            continue
        plan.append(StaticBlock(s.id, start, blk[0], blk[1]))
        free = start + blk[0]
    return plan


class StaticPolicy:
    """Open-loop executor of a static plan; the plan is made at the first slot."""

    def __init__(self):
        self.plan: Optional[list] = None

    def __call__(self, snapshot, state: SchedulerState, params: VedsParams,
                 sov_profiles=None, opv_profiles=None) -> SlotDecision:
        if self.plan is None:
            self.plan = schedule_static(snapshot, sov_profiles, params)
        for blk in self.plan:
            if blk.start <= state.t < blk.start + blk.length:
                if state.zeta[blk.sov] >= params.Q:
                    return IDLE
                return SlotDecision(blk.sov, Mode.DT, (), {blk.sov: blk.power})
        return IDLE
