"""Uplink rate models, per-slot bit/energy accounting and the local-computation cost."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

import numpy as np

from .errors import ConfigurationError, RejectedDecisionError


def dbm_per_hz_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class LinkBudgetParams:
    bandwidth: float = 20e6
    noise_psd: float = dbm_per_hz_to_watts(-174.0)
    slot_length: float = 0.02

    def __post_init__(self):
        if min(self.bandwidth, self.noise_psd, self.slot_length) <= 0:
            raise ConfigurationError("bandwidth, noise_psd and slot_length must be positive")

    @property
    def noise_power(self) -> float:
        return self.bandwidth * self.noise_psd


class Mode(str, Enum):
    DT = "DT"
    COT = "COT"


@dataclass(frozen=True)
class SlotDecision:
    scheduled_sov: Optional[int] = None
    mode: Mode = Mode.DT
    relays: tuple = ()
    powers: Mapping[int, float] = field(default_factory=dict)

    @property
    def idle(self) -> bool:
        return self.scheduled_sov is None

    def validate(self, p_max: Mapping[int, float], tol: float = 1e-12) -> None:
        if self.idle:
            if any(p > 0 for p in self.powers.values()):
                raise RejectedDecisionError("idle decision with nonzero power")
            return
        if self.mode == Mode.DT and self.relays:
            raise RejectedDecisionError("DT decision must not carry relays")
        active = {self.scheduled_sov, *self.relays}
        for vid, p in self.powers.items():
            if p < -tol or p > p_max.get(vid, math.inf) + tol:
                raise RejectedDecisionError(f"power {p} of vehicle {vid} out of range")
            if vid not in active and p != 0:
                raise RejectedDecisionError(f"unscheduled vehicle {vid} transmits")


IDLE = SlotDecision()


@dataclass(frozen=True)
class SlotOutcome:
    bits: Mapping[int, float] = field(default_factory=dict)
    energies: Mapping[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ComputeModel:
    flops_per_sample: float = 5e6
    batch_size: int = 32
    energy_coeff: float = 1e-28

    def __post_init__(self):
        if self.flops_per_sample <= 0 or self.batch_size <= 0 or self.energy_coeff <= 0:
            raise ConfigurationError("compute model parameters must be positive")


def rate_dt(p, gain, params: LinkBudgetParams):
    """Shannon rate of a direct V2I upload over the whole band (bit/s)."""
    snr = np.asarray(p, dtype=float) * np.asarray(gain, dtype=float) / params.noise_power
    out = params.bandwidth * np.log2(1.0 + snr)
    return float(out) if np.ndim(out) == 0 else out


def rate_v2v(p_m, gain_mn, params: LinkBudgetParams):
    return rate_dt(p_m, gain_mn, params)


def rate_cot(p_m, gain_mr, relay_terms, params: LinkBudgetParams) -> float:
    """Cooperative rate: the SOV and every relay contribute additive SNR at the RSU."""
    snr = p_m * gain_mr
    for p_n, g_n in relay_terms:
        snr += p_n * g_n
    return float(params.bandwidth * math.log2(1.0 + snr / params.noise_power))


def _gains(decision: SlotDecision, snapshot):
    m = decision.scheduled_sov
    g_mr = snapshot.v2i_of(m)
    relays = [(n, snapshot.opv2i_of(n), snapshot.v2v_of(m, n)) for n in decision.relays]
    return g_mr, relays


def decode_constraint_ok(decision: SlotDecision, snapshot, params: LinkBudgetParams = LinkBudgetParams(),
                         rtol: float = 1e-9) -> bool:
    """Every relay must decode the SOV's first-half broadcast at the cooperative rate."""
    if decision.idle or decision.mode == Mode.DT or not decision.relays:
        return True
    g_mr, relays = _gains(decision, snapshot)
    p_m = decision.powers.get(decision.scheduled_sov, 0.0)
    # compare SNRs rather than rates: same ordering, better conditioned
    snr_cot = p_m * g_mr + sum(decision.powers.get(n, 0.0) * g_nr for n, g_nr, _ in relays)
    for _, _, g_mn in relays:
        snr_v = p_m * g_mn
        if snr_cot > snr_v * (1.0 + rtol) + 1e-15 * params.noise_power:
            return False
    return True


def slot_outcome(decision: SlotDecision, snapshot, params: LinkBudgetParams = LinkBudgetParams()) -> SlotOutcome:
    """Bits delivered and energy spent in one slot under ``decision``."""
    if decision.idle:
        return SlotOutcome()
    if not decode_constraint_ok(decision, snapshot, params):
        raise RejectedDecisionError("relay cannot decode the SOV broadcast")
    m = decision.scheduled_sov
    k = params.slot_length
    p_m = decision.powers.get(m, 0.0)
    g_mr, relays = _gains(decision, snapshot)
    if decision.mode == Mode.DT:
        return SlotOutcome(bits={m: k * rate_dt(p_m, g_mr, params)}, energies={m: k * p_m})
    terms = [(decision.powers.get(n, 0.0), g_nr) for n, g_nr, _ in relays]
    bits = 0.5 * k * rate_cot(p_m, g_mr, terms, params)
    energies = {m: 0.5 * k * p_m}
    for n in decision.relays:
        energies[n] = 0.5 * k * decision.powers.get(n, 0.0)
    return SlotOutcome(bits={m: bits}, energies=energies)


def update_progress(zeta: Mapping[int, float], outcome: SlotOutcome, Q: float) -> dict:
    out = dict(zeta)
    for m, z in outcome.bits.items():
        out[m] = min(out.get(m, 0.0) + z, Q)
    return out


def compute_cost(model: ComputeModel, clock: float):
    """Local-update latency (s) and energy (J) at CPU frequency ``clock`` (cycles/s)."""
    if clock <= 0:
        raise ConfigurationError("clock frequency must be positive")
    cycles = model.flops_per_sample * model.batch_size
    return cycles / clock, model.energy_coeff * clock ** 2 * cycles
