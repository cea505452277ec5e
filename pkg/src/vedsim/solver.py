"""Per-slot subproblem solvers and brute-force oracles.

All solvers work in SNR-normalised units internally: a gain ``g`` becomes
``g / (beta * N0)`` so that the received SNR is simply ``gain * power``.

Objective conventions (one slot of length kappa, ``w`` = V * dsigma/dzeta):

* DT:  ``w*kappa*R_DT(p) - price*kappa*p``
* COT: ``w*kappa/2*R_COT - kappa/2*(price_m*p_m + sum price_n*p_n)``

``price`` is the energy price per joule charged by the caller (a virtual
queue value, possibly rescaled).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import nnls

from .comm import IDLE, LinkBudgetParams, Mode, SlotDecision
from .errors import NumericalError, ParameterError

LN2 = math.log(2.0)

OPTIMAL = "optimal"
CLAMPED = "clamped"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class DtSubproblem:
    weight: float
    gain: float
    queue: float
    p_max: float
    params: LinkBudgetParams = LinkBudgetParams()

    def __post_init__(self):
        if self.weight < 0 or self.gain < 0 or self.queue < 0 or self.p_max < 0:
            raise ParameterError("weight, gain, queue and p_max must be non-negative")


@dataclass(frozen=True)
class RelayTerm:
    gain_nr: float
    gain_mn: float
    queue: float
    p_max: float


@dataclass(frozen=True)
class CotSubproblem:
    """COT power allocation for one SOV and a fixed relay set.

    ``relays`` must be sorted by descending ``gain_mn`` (a prefix of the
    SOV->OPV ordering, or any subset of it listed in that order).
    """
    weight: float
    gain_mr: float
    queue_m: float
    p_max_m: float
    relays: tuple
    params: LinkBudgetParams = LinkBudgetParams()

    def __post_init__(self):
        if not self.relays:
            raise ParameterError("COT needs at least one relay")
        g = [r.gain_mn for r in self.relays]
        if any(a < b for a, b in zip(g, g[1:])):
            raise ParameterError("relays must be ordered by descending gain_mn")
        if self.weight < 0 or self.queue_m < 0 or self.p_max_m < 0:
            raise ParameterError("weight, queue and p_max must be non-negative")

    def arrays(self):
        """Normalised (a, b, c, bounds, prices) in SNR units."""
        n0 = self.params.noise_power
        b = np.array([r.gain_nr for r in self.relays]) / n0
        c = np.array([r.gain_mn for r in self.relays]) / n0
        ub = np.array([self.p_max_m] + [r.p_max for r in self.relays], dtype=float)
        price = np.array([self.queue_m] + [r.queue for r in self.relays], dtype=float)
        return self.gain_mr / n0, b, c, ub, price


@dataclass
class SolveResult:
    """``powers[0]`` is the SOV, ``powers[1:]`` the relays in subproblem order."""
    powers: np.ndarray
    objective: float
    kkt_residual: float = 0.0
    status: str = OPTIMAL
    iterations: int = 0


# ---------------------------------------------------------------- objectives

def dt_objective(p, sub: DtSubproblem):
    k = sub.params.slot_length
    snr = np.asarray(p, dtype=float) * sub.gain / sub.params.noise_power
    return sub.weight * k * sub.params.bandwidth * np.log2(1.0 + snr) - sub.queue * k * np.asarray(p)


def cot_objective(powers, sub: CotSubproblem):
    """Objective at one point (shape (1+n,)) or a batch (shape (N, 1+n))."""
    a, b, _, _, price = sub.arrays()
    v = np.asarray(powers, dtype=float)
    k = sub.params.slot_length
    snr = v[..., 0] * a + v[..., 1:] @ b
    return 0.5 * k * (sub.weight * sub.params.bandwidth * np.log2(1.0 + snr) - v @ price)


def cot_constraints(sub: CotSubproblem):
    """Linear constraints ``G v <= h`` (boxes plus one decode row per relay)."""
    a, b, c, ub, _ = sub.arrays()
    n = len(b) + 1
    eye = np.eye(n)
    dec = np.column_stack([a - c, np.tile(b, (len(c), 1))])
    G = np.vstack([-eye, eye, dec])
    h = np.concatenate([np.zeros(n), ub, np.zeros(len(c))])
    return G, h


def max_violation(sub: CotSubproblem, powers) -> float:
    """Largest constraint violation, decode rows measured relative to the SNR scale."""
    G, h = cot_constraints(sub)
    n = len(powers)
    r = G @ np.asarray(powers, dtype=float) - h
    box = r[: 2 * n]
    dec = r[2 * n:]
    a, b, c, ub, _ = sub.arrays()
    scale = max(1.0, float(np.max(np.abs(G[2 * n:]) @ ub))) if len(dec) else 1.0
    return float(max(0.0, box.max(initial=0.0), (dec / scale).max(initial=0.0)))


# ---------------------------------------------------------------- DT

def solve_dt(sub: DtSubproblem) -> SolveResult:
    """Closed-form KKT solution of the single-link problem."""
    if sub.gain == 0 or sub.weight == 0 or sub.p_max == 0:
        p = 0.0
    elif sub.queue == 0:
        p = sub.p_max
    else:
        interior = sub.weight * sub.params.bandwidth / (sub.queue * LN2) - sub.params.noise_power / sub.gain
        p = min(max(interior, 0.0), sub.p_max)
    status = OPTIMAL if 0.0 < p < sub.p_max else CLAMPED
    return SolveResult(np.array([p]), float(dt_objective(p, sub)), 0.0, status)


# ---------------------------------------------------------------- exact COT

def _segment_best(W, Z0, dZ, L0, dL):
    """Maximise W*ln(1+Z0+t*dZ) - (L0+t*dL) over t in [0,1] (elementwise)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = W / dL - (1.0 + Z0) / dZ
    t = np.where(dZ <= 0, np.where(dL < 0, 1.0, 0.0), np.where(dL <= 0, 1.0, t))
    t = np.clip(np.nan_to_num(t, nan=0.0), 0.0, 1.0)
    return t, W * np.log1p(Z0 + t * dZ) - (L0 + t * dL)


def exact_cot_sets(W, a, pm, hm, b, c, pn, hn, masks):
    """Exact optimum of the normalised COT problem for many relay sets of one SOV.

    See ``exact_cot_batch``; here ``d`` is derived from the SOV->OPV gains
    ``c`` of the relays in each set.
    """
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    c = np.asarray(c, dtype=float)
    d = np.where(masks, c[None, :], np.inf).min(axis=1) - a
    K = len(masks)
    full = lambda v: np.full(K, v, dtype=float)
    return exact_cot_batch(full(W), full(a), full(pm), full(hm), d, b, pn, hn, masks)


def exact_cot_batch(W, a, pm, hm, d, b, pn, hn, masks):
    """Exact optimum of the normalised COT problem for many relay sets of one SOV.

    Objective ``W*ln(1 + a*x + sum b_j y_j) - hm*x - sum hn_j*y_j`` with
    ``0<=x<=pm``, ``0<=y_j<=pn_j`` and, for every relay j in the set,
    ``a*x + sum b y <= c_j*x``.

    The decode rows collapse to ``S = sum b_j y_j <= d*x`` with
    ``d = min_set c - a``. For a given relay SNR ``S`` the cheapest relay mix
    fills relays in ascending order of ``hn_j/b_j``, which makes the cost a
    convex piecewise-linear function of ``S``. Within each linear piece the
    objective depends on ``(x, S)`` only through ``a*x + S`` plus linear
    terms, so an optimum sits on the boundary of the piece: the diagonal
    ``S = d*x``, the edge ``x = pm`` or a breakpoint ``S = B_k``. Each of those
    segments has a closed-form 1-D optimum.

    Every row k is an independent problem with its own ``W, a, pm, hm`` and
    ``d = min_set c - a``; the relays' ``b, pn, hn`` are shared and ``masks``
    selects each row's relay set. Returns (values, x, y) with shapes (K,),
    (K,), (K, n).
    """
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    K, n = masks.shape
    b = np.asarray(b, dtype=float)
    pn = np.asarray(pn, dtype=float)
    hn = np.asarray(hn, dtype=float)
    d = np.asarray(d, dtype=float)
    W = np.asarray(W, dtype=float)[:, None]
    a = np.asarray(a, dtype=float)[:, None]
    pm = np.asarray(pm, dtype=float)[:, None]
    hm = np.asarray(hm, dtype=float)[:, None]

    usable = b > 0
    with np.errstate(divide="ignore"):
        unit = np.where(usable, hn / np.where(usable, b, 1.0), np.inf)
    order = np.argsort(unit, kind="stable")
    m_o = masks[:, order] & usable[order][None, :]
    cap = np.where(m_o, (b * pn)[order][None, :], 0.0)
    u_o = np.where(np.isfinite(unit[order]), unit[order], 0.0)
    Bc = np.concatenate([np.zeros((K, 1)), np.cumsum(cap, axis=1)], axis=1)
    Cc = np.concatenate([np.zeros((K, 1)), np.cumsum(cap * u_o[None, :], axis=1)], axis=1)

    pos = d > 0
    dd = np.where(pos, d, 1.0)[:, None]
    reach = np.where(pos[:, None], d[:, None] * pm, 0.0)

    # tier segments (diagonal and top edge)
    s_lo = Bc[:, :-1]
    s_hi = np.minimum(Bc[:, 1:], reach)
    ds = s_hi - s_lo
    ok_tier = (ds > 0) & pos[:, None]
    ds = np.where(ok_tier, ds, 0.0)
    Z0d = s_lo * (a / dd + 1.0)
    dZd = ds * (a / dd + 1.0)
    L0d = hm * s_lo / dd + Cc[:, :-1]
    dLd = ds * (hm / dd + u_o[None, :])
    Z0t = a * pm + s_lo
    L0t = hm * pm + Cc[:, :-1]
    dLt = ds * u_o[None, :]

    # horizontal segments S = B_k, x from B_k/d to pm
    x0 = np.where(pos[:, None], Bc / dd, 0.0)
    ok_h = x0 <= pm * (1 + 1e-12)
    x0 = np.minimum(x0, pm)
    x_end = np.where((pos | (d == 0))[:, None], pm, 0.0)
    x_end = np.maximum(x_end, x0)
    Z0h = a * x0 + Bc
    dZh = a * (x_end - x0)
    L0h = hm * x0 + Cc
    dLh = hm * (x_end - x0)
    ok_h[:, 1:] &= pos[:, None]

    td, vd = _segment_best(W, Z0d, dZd, L0d, dLd)
    tt, vt = _segment_best(W, Z0t, ds, L0t, dLt)
    th, vh = _segment_best(W, Z0h, dZh, L0h, dLh)
    vd = np.where(ok_tier, vd, -np.inf)
    vt = np.where(ok_tier, vt, -np.inf)
    vh = np.where(ok_h, vh, -np.inf)

    # candidate (x, S) per segment, then argmax
    xd = (s_lo + td * ds) / dd
    Sd = s_lo + td * ds
    xt = np.broadcast_to(pm, Sd.shape)
    St = s_lo + tt * ds
    xh = x0 + th * (x_end - x0)
    Sh = Bc
    vals = np.concatenate([vh, vd, vt], axis=1)
    xs = np.concatenate([xh, xd, xt], axis=1)
    Ss = np.concatenate([Sh, Sd, St], axis=1)
    best = np.argmax(vals, axis=1)
    rows = np.arange(K)
    value = vals[rows, best]
    x = xs[rows, best]
    S = Ss[rows, best]

    # cheapest relay mix for S
    fill = np.clip(S[:, None] - Bc[:, :-1], 0.0, cap)
    y = np.zeros((K, n))
    bo = b[order]
    y_o = np.where(cap > 0, fill / np.where(bo > 0, bo, 1.0)[None, :], 0.0)
    y[:, order] = np.minimum(y_o, pn[order][None, :])
    return value, x, y


def _normalised(sub: CotSubproblem):
    a, b, c, ub, price = sub.arrays()
    k = sub.params.slot_length
    W = sub.weight * k * sub.params.bandwidth / (2.0 * LN2)
    return W, a, b, c, ub, 0.5 * k * price


def solve_cot_exact(sub: CotSubproblem) -> SolveResult:
    """Exact COT optimum via the structured boundary search."""
    W, a, b, c, ub, hp = _normalised(sub)
    val, x, y = exact_cot_sets(W, a, ub[0], hp[0], b, c, ub[1:], hp[1:], np.ones((1, len(b)), bool))
    powers = np.concatenate([[x[0]], y[0]])
    obj = float(cot_objective(powers, sub))
    res = SolveResult(powers, obj, 0.0, OPTIMAL)
    res.kkt_residual = kkt_residual(sub, powers)
    return res


# ---------------------------------------------------------------- barrier COT

def _kkt_parts(grad_f, G, s, lam):
    """Stationarity relative to the gradient scale; complementarity as the absolute gap sum(lam*s)."""
    stat = np.abs(grad_f + G.T @ lam).max() / (1.0 + np.abs(grad_f).max())
    gap = float(np.abs(lam * s).sum())
    return float(max(stat, gap))


def _scaled_problem(sub: CotSubproblem):
    """Variables scaled to [0, 1] boxes and objective divided by W."""
    W, a, b, c, ub, hp = _normalised(sub)
    k = np.concatenate([[a], b]) * ub
    lin = hp * ub / W
    n = len(k)
    eye = np.eye(n)
    dec = np.column_stack([(a - c) * ub[0], np.tile(b * ub[1:], (len(c), 1))])
    norms = np.abs(dec).max(axis=1, keepdims=True)
    dec = dec / np.where(norms > 0, norms, 1.0)
    G = np.vstack([-eye, eye, dec])
    h = np.concatenate([np.zeros(n), np.ones(n), np.zeros(len(c))])
    return W, k, lin, G, h, ub


def kkt_residual(sub: CotSubproblem, powers) -> float:
    """KKT residual of a candidate point in scaled units.

    Multipliers are fitted by non-negative least squares on stationarity
    and complementarity together, so no active-set threshold is needed:
    a multiplier on a constraint with slack s costs lambda * s. The
    complementarity part is the gap sum(lambda * s), which bounds the
    objective error in units of the rate weight.
    """
    W, k, lin, G, h, ub = _scaled_problem(sub)
    if W == 0:
        return 0.0
    safe = np.where(ub > 0, ub, 1.0)
    v = np.where(ub > 0, np.asarray(powers, dtype=float) / safe, 0.0)
    grad_f = -k / (1.0 + k @ v) + lin
    s = h - G @ v
    sp = np.maximum(s, 0.0)
    A = np.vstack([G.T, np.diag(sp)])
    lam, _ = nnls(A, np.concatenate([-grad_f, np.zeros(len(s))]))
    return _kkt_parts(grad_f, G, sp, lam) + max(0.0, -s.min())


def solve_cot(sub: CotSubproblem, tol: float = 1e-6, max_iter: int = 200, mu0: float = 1.0,
              mu_factor: float = 10.0) -> SolveResult:
    """Log-barrier interior-point solve of the COT power allocation.

    Damped Newton centring with a fraction-to-boundary rule and Armijo
    backtracking; the barrier weight starts at ``mu0`` and shrinks by
    ``mu_factor`` per stage until the KKT residual (with multipliers
    ``mu / slack``) is at most ``tol``.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    W, k, lin, G, h, ub = _scaled_problem(sub)
    a, b, c, _, _ = sub.arrays()
    n = len(k)
    d = c.min() - a
    free = (ub > 0) & (k > 0)
    free[0] = ub[0] > 0
    if W == 0 or ub[0] == 0 or d <= 0 or not free[0]:
        # degenerate: no strictly feasible COT interior; the SOV alone (or nothing) can send
        p = np.zeros(n)
        if W > 0 and ub[0] > 0 and d >= 0 and a > 0:
            dt = solve_dt(DtSubproblem(sub.weight, sub.gain_mr, sub.queue_m, sub.p_max_m, sub.params))
            p[0] = dt.powers[0]
        return SolveResult(p, float(cot_objective(p, sub)), kkt_residual(sub, p), CLAMPED)

    # relays that cannot help are pinned at zero
    idx = np.flatnonzero(free)
    kf, linf = k[idx], lin[idx]
    Gf = G[:, idx]
    keep = np.abs(Gf).sum(axis=1) > 0
    Gf, hf = Gf[keep], h[keep]
    v = np.zeros(len(idx))
    v[0] = 0.5
    nr = max(len(idx) - 1, 1)
    if len(idx) > 1:
        room = d * ub[0] * 0.5
        v[1:] = np.minimum(0.5, 0.5 * room / (nr * kf[1:]))

    def phi(z, mu):
        s = hf - Gf @ z
        if np.any(s <= 0):
            return np.inf
        return -math.log1p(kf @ z) + linf @ z - mu * np.log(s).sum()

    mu = mu0
    it = 0
    best = v.copy()
    residual = np.inf
    while True:
        # centring
        for _ in range(max_iter):
            s = hf - Gf @ v
            den = 1.0 + kf @ v
            gf = -kf / den + linf
            grad = gf + mu * (Gf.T @ (1.0 / s))
            if np.abs(grad).max() <= 0.1 * tol * (1.0 + np.abs(gf).max()):
                break
            H = np.outer(kf, kf) / den ** 2 + mu * (Gf.T * (1.0 / s ** 2)) @ Gf
            try:
                step = -np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(H, grad, rcond=None)[0]
            dec2 = float(-grad @ step)
            if dec2 <= 1e-30:
                break
            if it >= max_iter:
                raise NumericalError("barrier solver hit its iteration cap", best=_expand(best, idx, ub, n))
            it += 1
            Gs = Gf @ step
            pos = Gs > 0
            t = 1.0
            if pos.any():
                t = min(1.0, 0.99 * float(np.min(s[pos] / Gs[pos])))
            if dec2 > 1e-8:
                # damped phase: Armijo backtracking on the barrier function
                f0 = phi(v, mu)
                while phi(v + t * step, mu) > f0 - 0.25 * t * dec2 and t > 1e-12:
                    t *= 0.5
            v = v + t * step
            best = v.copy()
        s = hf - Gf @ v
        lam = mu / s
        gf = -kf / (1.0 + kf @ v) + linf
        residual = _kkt_parts(gf, Gf, s, lam)
        if residual <= tol:
            # confirm with the multiplier-fitting residual used by the oracle checks
            residual = kkt_residual(sub, _expand(v, idx, ub, n))
            if residual <= tol:
                break
        if mu < 1e-18:
            raise NumericalError("barrier weight underflow before reaching tolerance", best=_expand(best, idx, ub, n))
        mu /= mu_factor

    p = _expand(v, idx, ub, n)
    return SolveResult(p, float(cot_objective(p, sub)), residual, OPTIMAL, it)


def _expand(v, idx, ub, n):
    p = np.zeros(n)
    p[idx] = v * ub[idx]
    return p


# ---------------------------------------------------------------- grid oracles

def grid_maximize(fn: Callable[[np.ndarray], np.ndarray], upper: np.ndarray,
                  feasible: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                  step: float = 1e-2, final_step: float = 1e-4, zoom: int = 3):
    """Box grid search with local zoom refinement.

    Evaluates ``fn`` on a regular grid of spacing ``step`` over
    ``[0, upper]``, then repeatedly re-grids a neighbourhood of the incumbent
    ten times finer until the spacing reaches ``final_step``.
    Returns (best point, best value).
    """
    upper = np.asarray(upper, dtype=float)
    axes = [np.unique(np.append(np.arange(0.0, u + 1e-15, step), u)) if u > 0 else np.zeros(1)
            for u in upper]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(upper))
    best_x, best_v = _grid_eval(fn, feasible, pts)
    h = step
    while h > final_step * (1 + 1e-9):
        h_new = h / 10.0
        axes = []
        for i, u in enumerate(upper):
            lo = max(0.0, best_x[i] - zoom * h)
            hi = min(u, best_x[i] + zoom * h)
            ax = np.arange(lo, hi + 1e-15, h_new) if u > 0 else np.zeros(1)
            axes.append(np.unique(np.clip(np.append(ax, [best_x[i], hi]), 0, u)))
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(upper))
        x, v = _grid_eval(fn, feasible, pts)
        if v > best_v:
            best_x, best_v = x, v
        h = h_new
    return best_x, best_v


def _grid_eval(fn, feasible, pts):
    vals = np.asarray(fn(pts), dtype=float)
    if feasible is not None:
        vals = np.where(feasible(pts), vals, -np.inf)
    i = int(np.argmax(vals))
    return pts[i].copy(), float(vals[i])


def grid_search_dt(sub: DtSubproblem, step: float = 1e-4):
    grid = np.append(np.arange(0.0, sub.p_max, step), sub.p_max)
    vals = dt_objective(grid, sub)
    i = int(np.argmax(vals))
    return float(grid[i]), float(vals[i])


def cot_feasible(sub: CotSubproblem, rtol: float = 1e-12):
    a, b, c, _, _ = sub.arrays()

    def ok(pts):
        cot = pts[:, 0] * a + pts[:, 1:] @ b
        v2v = pts[:, :1] * c[None, :]
        return np.all(cot[:, None] <= v2v * (1 + rtol) + 1e-300, axis=1)
    return ok


def _last_relay_best(arrs, lead: np.ndarray) -> np.ndarray:
    """Exact best power of the last relay for each row of leading powers (nan if infeasible)."""
    W, a, b, c, ub, hp = arrs
    x = lead[:, 0]
    others = lead[:, 1:] @ b[:-1] if len(b) > 1 else np.zeros(len(lead))
    slack = (c.min() - a) * x - others
    bl, hl, pl = b[-1], hp[-1], ub[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cap = np.where(bl > 0, slack / bl, np.where(slack >= 0, pl, np.nan))
    cap = np.minimum(cap, pl)
    cap = np.where(slack < -1e-12 * (1.0 + np.abs(a * x)), np.nan, np.maximum(cap, 0.0))
    if bl == 0:
        y = np.zeros(len(lead))
    elif hl == 0:
        y = cap
    else:
        y = W / hl - (1.0 + a * x + others) / bl
    return np.where(np.isnan(cap), np.nan, np.clip(y, 0.0, np.nan_to_num(cap)))


def _lead_powers(arrs, lead: np.ndarray) -> np.ndarray:
    """Map (SOV power, budget fractions of relays 1..n-1) to powers.

    Relay j takes fraction ``theta_j`` of what the decode constraint still
    allows it, so the ridge along a binding constraint becomes a box face.
    """
    _, a, b, c, ub, _ = arrs
    x = lead[:, 0]
    slack = (c.min() - a) * x
    out = [x]
    for j in range(len(b) - 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            cap = np.where(b[j] > 0, slack / b[j], ub[j + 1])
        y = lead[:, j + 1] * np.clip(cap, 0.0, ub[j + 1])
        slack = slack - b[j] * y
        out.append(y)
    return np.column_stack(out)


def grid_search_cot(sub: CotSubproblem, step: float = 1e-3, final_step: float = 1e-8, zoom: int = 5):
    """Grid oracle for the COT problem.

    Grids the SOV power (watts) and, for all relays but one, the fraction of
    the remaining decode budget each one uses; the remaining relay's power is
    then chosen exactly. Each relay takes a turn as the exact one and the best
    run wins, so an optimum with one relay at its cap and another on the
    decode constraint always lies on a box face of some run.
    """
    W, a, b, c, ub, hp = _normalised(sub)
    n = len(b)
    best = (None, -np.inf)
    for last in range(n):
        perm = [j for j in range(n) if j != last] + [last]
        arrs = (W, a, b[perm], c, np.concatenate([ub[:1], ub[1:][perm]]), np.concatenate([hp[:1], hp[1:][perm]]))

        def full(lead, arrs=arrs):
            head = _lead_powers(arrs, lead)
            y = _last_relay_best(arrs, head)
            return np.column_stack([head, np.nan_to_num(y)]), ~np.isnan(y)

        def fn(lead, arrs=arrs, perm=perm):
            pts, _ = full(lead)
            out = np.empty_like(pts)
            out[:, 0] = pts[:, 0]
            out[:, 1:][:, perm] = pts[:, 1:]
            return cot_objective(out, sub)

        upper = np.concatenate([ub[:1], np.ones(n - 1)])
        lead, val = grid_maximize(fn, upper, lambda l: full(l)[1], step=step, final_step=final_step, zoom=zoom)
        if val > best[1]:
            pts, _ = full(lead[None, :])
            out = pts[0].copy()
            out[1:][perm] = pts[0, 1:]
            best = (out, float(val))
    return best


# ---------------------------------------------------------------- slot problems

@dataclass(frozen=True)
class SlotProblem:
    """Everything the per-slot scheduler needs, in SOV/OPV index order."""
    sov_ids: tuple
    opv_ids: tuple
    v2i: np.ndarray
    opv2i: np.ndarray
    v2v: np.ndarray
    weight: np.ndarray
    price_sov: np.ndarray
    price_opv: np.ndarray
    p_max_sov: np.ndarray
    p_max_opv: np.ndarray
    eligible: np.ndarray
    params: LinkBudgetParams = LinkBudgetParams()

    def dt_sub(self, i: int) -> DtSubproblem:
        return DtSubproblem(float(self.weight[i]), float(self.v2i[i]), float(self.price_sov[i]),
                            float(self.p_max_sov[i]), self.params)

    def relay_order(self, i: int) -> np.ndarray:
        return np.argsort(-self.v2v[i], kind="stable")

    def cot_sub(self, i: int, relays: Sequence[int]) -> CotSubproblem:
        rel = sorted(relays, key=lambda j: (-self.v2v[i, j], j))
        terms = tuple(RelayTerm(float(self.opv2i[j]), float(self.v2v[i, j]),
                                float(self.price_opv[j]), float(self.p_max_opv[j])) for j in rel)
        return CotSubproblem(float(self.weight[i]), float(self.v2i[i]), float(self.price_sov[i]),
                             float(self.p_max_sov[i]), terms, self.params)

    def _norm(self, i):
        n0 = self.params.noise_power
        k = self.params.slot_length
        W = self.weight[i] * k * self.params.bandwidth / (2.0 * LN2)
        return (W, self.v2i[i] / n0, self.p_max_sov[i], 0.5 * k * self.price_sov[i],
                self.opv2i / n0, self.v2v[i] / n0, self.p_max_opv, 0.5 * k * self.price_opv)

    def cot_sets(self, i: int, masks: np.ndarray):
        """Exact values and powers for several relay sets (boolean masks over OPVs)."""
        W, a, pm, hm, b, c, pn, hn = self._norm(i)
        return exact_cot_sets(W, a, pm, hm, b, c, pn, hn, masks)

    def prefix_masks(self, i: int, useful_only: bool = True) -> np.ndarray:
        order = self.relay_order(i)
        U = len(self.opv_ids)
        count = U
        if useful_only:
            count = int(np.sum(self.v2v[i] > self.v2i[i]))
        rank = np.empty(U, dtype=int)
        rank[order] = np.arange(U)
        return rank[None, :] < np.arange(1, count + 1)[:, None]

    def decision_value(self, decision: SlotDecision) -> float:
        """Slot objective of an arbitrary decision for this problem."""
        if decision.idle:
            return 0.0
        i = self.sov_ids.index(decision.scheduled_sov)
        n0 = self.params.noise_power
        k = self.params.slot_length
        beta = self.params.bandwidth
        p_m = decision.powers.get(decision.scheduled_sov, 0.0)
        if decision.mode == Mode.DT:
            return float(self.weight[i] * k * beta * math.log2(1 + p_m * self.v2i[i] / n0)
                         - self.price_sov[i] * k * p_m)
        snr = p_m * self.v2i[i] / n0
        cost = self.price_sov[i] * p_m
        for n in decision.relays:
            j = self.opv_ids.index(n)
            p_n = decision.powers.get(n, 0.0)
            snr += p_n * self.opv2i[j] / n0
            cost += self.price_opv[j] * p_n
        return float(0.5 * k * (self.weight[i] * beta * math.log2(1 + snr) - cost))


def _dt_decision(problem: SlotProblem, i: int, p: float) -> SlotDecision:
    return SlotDecision(problem.sov_ids[i], Mode.DT, (), {problem.sov_ids[i]: float(p)})


def _cot_decision(problem: SlotProblem, i: int, mask, x, y) -> SlotDecision:
    m = problem.sov_ids[i]
    order = [j for j in problem.relay_order(i) if mask[j]]
    relays = tuple(problem.opv_ids[j] for j in order)
    powers = {m: float(x)}
    for j in order:
        powers[problem.opv_ids[j]] = float(y[j])
    return SlotDecision(m, Mode.COT, relays, powers)


@dataclass
class Candidate:
    sov_index: int
    mode: Mode
    prefix: int
    value: float


def solve_slot_problem(problem: SlotProblem, allow_cot: bool = True, collect: Optional[list] = None):
    """Enumerate SOVs, DT and COT relay prefixes; keep the best strictly positive value.

    Ties keep the first candidate found (SOV order, DT before COT, shorter
    prefix first). Returns (decision, value). When ``collect`` is a list,
    every enumerated candidate (including prefixes that cannot beat DT) is
    appended to it.
    """
    elig = np.flatnonzero(problem.eligible)
    if len(elig) == 0:
        return IDLE, 0.0
    n0 = problem.params.noise_power
    k = problem.params.slot_length
    beta = problem.params.bandwidth

    # DT for every eligible SOV in closed form
    a = problem.v2i[elig] / n0
    w = problem.weight[elig]
    q = problem.price_sov[elig]
    pm = problem.p_max_sov[elig]
    with np.errstate(divide="ignore", invalid="ignore"):
        interior = w * beta / (q * LN2) - 1.0 / a
    p_dt = np.where(q == 0, pm, np.clip(np.nan_to_num(interior, nan=0.0, posinf=np.inf, neginf=0.0), 0.0, pm))
    p_dt = np.where((a == 0) | (w == 0), 0.0, p_dt)
    v_dt = w * k * beta * np.log2(1.0 + p_dt * a) - q * k * p_dt

    # COT prefixes for all eligible SOVs in one batch
    rows_of = {}
    if allow_cot and len(problem.opv_ids):
        masks, owner, prefix = [], [], []
        for pos, i in enumerate(elig):
            m = problem.prefix_masks(i, useful_only=collect is None)
            masks.append(m)
            owner.extend([pos] * len(m))
            prefix.extend(range(1, len(m) + 1))
        masks = np.concatenate(masks) if masks else np.zeros((0, len(problem.opv_ids)), bool)
        if len(masks):
            owner = np.array(owner)
            c = problem.v2v[elig[owner]] / n0
            d = np.where(masks, c, np.inf).min(axis=1) - a[owner]
            W = w[owner] * k * beta / (2.0 * LN2)
            vals, xs, ys = exact_cot_batch(W, a[owner], pm[owner], 0.5 * k * q[owner], d,
                                           problem.opv2i / n0, problem.p_max_opv,
                                           0.5 * k * problem.price_opv, masks)
            for pos in range(len(elig)):
                rows_of[pos] = np.flatnonzero(owner == pos)

    best, best_val = IDLE, 0.0
    for pos, i in enumerate(elig):
        if collect is not None:
            collect.append(Candidate(int(i), Mode.DT, 0, float(v_dt[pos])))
        if v_dt[pos] > best_val:
            best, best_val = _dt_decision(problem, i, p_dt[pos]), float(v_dt[pos])
        rows = rows_of.get(pos)
        if rows is None or len(rows) == 0:
            continue
        if collect is not None:
            collect.extend(Candidate(int(i), Mode.COT, int(r), float(vals[j]))
                           for r, j in enumerate(rows, start=1))
        j = rows[int(np.argmax(vals[rows]))]
        if vals[j] > best_val:
            dec = _cot_decision(problem, i, masks[j], xs[j], ys[j])
            best, best_val = dec, problem.decision_value(dec)
    return best, best_val


def best_subset_exhaustive(problem: SlotProblem, i: int):
    """Best COT value over every nonempty relay subset (exact per subset).

    Returns (best subset value, best prefix value).
    """
    U = len(problem.opv_ids)
    if U == 0:
        return -np.inf, -np.inf
    if U > 12:
        raise ParameterError("exhaustive subset search limited to 12 OPVs")
    codes = np.arange(1, 2 ** U)
    masks = ((codes[:, None] >> np.arange(U)[None, :]) & 1).astype(bool)
    vals, _, _ = problem.cot_sets(i, masks)
    pvals, _, _ = problem.cot_sets(i, problem.prefix_masks(i, useful_only=False))
    return float(vals.max()), float(pvals.max())


def brute_force_problem(problem: SlotProblem, power_grid_step: float = 1e-2,
                        final_step: float = 1e-4, allow_cot: bool = True):
    """Exhaustive oracle: SOV x mode x every relay subset x gridded powers."""
    S, U = len(problem.sov_ids), len(problem.opv_ids)
    if S > 4 or U > 8:
        raise ParameterError("brute-force oracle is limited to |S|<=4 and |U|<=8")
    best, best_val = IDLE, 0.0
    for i in range(S):
        if not problem.eligible[i]:
            continue
        sub = problem.dt_sub(i)
        x, v = grid_maximize(lambda p: dt_objective(p[:, 0], sub), np.array([sub.p_max]),
                             step=power_grid_step, final_step=final_step)
        if v > best_val:
            best, best_val = _dt_decision(problem, i, x[0]), v
        if not allow_cot:
            continue
        for r in range(1, U + 1):
            for subset in itertools.combinations(range(U), r):
                cs = problem.cot_sub(i, subset)
                x, v = grid_search_cot(cs, step=power_grid_step, final_step=final_step)
                if v > best_val:
                    mask = np.zeros(U, bool)
                    mask[list(subset)] = True
                    order = [j for j in problem.relay_order(i) if mask[j]]
                    y = np.zeros(U)
                    # subproblem lists relays by descending gain_mn, same as relay_order
                    y[order] = x[1:]
                    best, best_val = _cot_decision(problem, i, mask, x[0], y), v
    return best, best_val


def brute_force_slot(snapshot, state, params, power_grid_step: float = 1e-2,
                     sov_profiles=None, opv_profiles=None):
    """Exhaustive per-slot oracle on a channel snapshot and scheduler state."""
    from .veds import build_slot_problem

    problem = build_slot_problem(snapshot, state, params, sov_profiles, opv_profiles)
    return brute_force_problem(problem, power_grid_step)


# ---------------------------------------------------------------- offline oracle

@dataclass(frozen=True)
class TinyInstance:
    """A frozen channel trace plus budgets for the offline oracle.

    ``v2i[t]`` has shape (S,), ``opv2i[t]`` (U,), ``v2v[t]`` (S, U).
    """
    v2i: np.ndarray
    opv2i: np.ndarray
    v2v: np.ndarray
    sov_budget: np.ndarray
    opv_budget: np.ndarray
    e_cp: np.ndarray
    t_cp: np.ndarray
    Q: float
    alpha: float
    params: LinkBudgetParams = LinkBudgetParams()

    @property
    def T(self) -> int:
        return len(self.v2i)


@dataclass
class OfflineResult:
    bits: np.ndarray            # (T, S) per-slot bits z*
    sigma_sum: float
    sigma_weighted_sum: float   # sum_t sum_m z*_m(t) dsigma(zeta*_m(t))
    sov_energy: np.ndarray
    opv_energy: np.ndarray


def _slot_actions(inst: TinyInstance, t: int, levels: Sequence[float]):
    """All feasible single-slot actions: (sov index or -1, bits, energy vector)."""
    S, U = inst.v2i.shape[1], inst.opv2i.shape[1]
    n0 = inst.params.noise_power
    k = inst.params.slot_length
    beta = inst.params.bandwidth
    acts = [(-1, 0.0, np.zeros(S + U))]
    for m in range(S):
        for p in levels:
            e = np.zeros(S + U)
            e[m] = k * p
            acts.append((m, k * beta * math.log2(1 + p * inst.v2i[t, m] / n0), e))
        for r in range(1, U + 1):
            for subset in itertools.combinations(range(U), r):
                for combo in itertools.product(levels, repeat=r + 1):
                    pm, pr = combo[0], combo[1:]
                    snr = pm * inst.v2i[t, m] + sum(p * inst.opv2i[t, j] for p, j in zip(pr, subset))
                    if any(snr > pm * inst.v2v[t, m, j] * (1 + 1e-12) for j in subset):
                        continue
                    e = np.zeros(S + U)
                    e[m] = 0.5 * k * pm
                    for p, j in zip(pr, subset):
                        e[S + j] = 0.5 * k * p
                    acts.append((m, 0.5 * k * beta * math.log2(1 + snr / n0), e))
    # drop actions dominated by another action of the same SOV
    kept = []
    for a in acts:
        dominated = any(b is not a and b[0] == a[0] and b[1] >= a[1] and np.all(b[2] <= a[2])
                        and (b[1] > a[1] or np.any(b[2] < a[2])) for b in acts)
        if not dominated:
            kept.append(a)
    return kept


def offline_optimal(inst: TinyInstance, power_levels: Sequence[float] = (0.1, 0.2, 0.3)):
    """Exact offline optimum of the sigma-sum over a frozen trace.

    Dynamic programme over slots whose state is (zeta per SOV, energy per
    vehicle); states are pruned by Pareto dominance within equal energy
    vectors. Respects budgets (SOVs net of computation energy), the
    compute-latency start rule and the stop-after-Q rule.
    """
    from .veds import sigma, dsigma

    T = inst.T
    S, U = inst.v2i.shape[1], inst.opv2i.shape[1]
    if T > 6 or S > 2 or U > 2 or len(power_levels) > 3:
        raise ParameterError("offline oracle limited to T<=6, |S|<=2, |U|<=2, 3 power levels")
    k = inst.params.slot_length
    budget = np.concatenate([inst.sov_budget - inst.e_cp, inst.opv_budget]) + 1e-12
    Q = inst.Q

    zeta = np.zeros((1, S))
    energy = np.zeros((1, S + U))
    parents = []
    for t in range(T):
        acts = _slot_actions(inst, t, power_levels)
        a_sov = np.array([a[0] for a in acts])
        a_bits = np.array([a[1] for a in acts])
        a_e = np.array([a[2] for a in acts])
        ns, na = len(zeta), len(acts)
        Z = np.repeat(zeta, na, axis=0)
        E = np.repeat(energy, na, axis=0) + np.tile(a_e, (ns, 1))
        sov = np.tile(a_sov, ns)
        bits = np.tile(a_bits, ns)
        parent = np.repeat(np.arange(ns), na)
        act = np.tile(np.arange(na), ns)
        ok = np.all(E <= budget[None, :], axis=1)
        busy = sov >= 0
        sidx = np.maximum(sov, 0)
        # eligibility: computation done and model not yet delivered
        elig = (inst.t_cp[sidx] <= t * k + 1e-12) & (Z[np.arange(len(Z)), sidx] < Q)
        ok &= ~busy | elig
        Z = Z.copy()
        Z[np.arange(len(Z))[busy], sidx[busy]] = np.minimum(Z[busy, sidx[busy]] + bits[busy], Q)
        Z, E, parent, act = Z[ok], E[ok], parent[ok], act[ok]
        keep = _pareto_by_energy(Z, E, k)
        zeta, energy = Z[keep], E[keep]
        parents.append((parent[keep], act[keep], acts))

    score = sigma(zeta, inst.alpha, Q).sum(axis=1)
    best = int(np.argmax(score))
    # backtrack
    traj = np.zeros((T, S))
    e_tot = energy[best].copy()
    idx = best
    for t in range(T - 1, -1, -1):
        par, act, acts = parents[t]
        m, b, _ = acts[act[idx]]
        if m >= 0:
            traj[t, m] = b
        idx = par[idx]
    zt = np.minimum(np.cumsum(traj, axis=0), Q)
    z_before = np.vstack([np.zeros((1, S)), zt[:-1]])
    applied = zt - z_before
    wsum = float((applied * dsigma(z_before, inst.alpha, Q)).sum())
    return OfflineResult(applied, float(score[best]), wsum, e_tot[:S], e_tot[S:])


def _pareto_by_energy(Z, E, k):
    """Indices of states not dominated in zeta by another state with identical energies."""
    if len(Z) == 0:
        return np.zeros(0, dtype=int)
    key = np.round(E / (k * 1e-9)).astype(np.int64)
    _, gid = np.unique(key, axis=0, return_inverse=True)
    gid = gid.ravel()
    S = Z.shape[1]
    if S == 1:
        order = np.lexsort((-Z[:, 0], gid))
        first = np.ones(len(order), bool)
        first[1:] = gid[order][1:] != gid[order][:-1]
        return order[first]
    order = np.lexsort((-Z[:, 1], -Z[:, 0], gid))
    g = gid[order]
    z1 = Z[order, 1]
    span = float(np.max(Z[:, 1])) + 1.0
    shifted = z1 + g * span
    prev = np.maximum.accumulate(np.concatenate([[-np.inf], shifted[:-1]]))
    start = np.ones(len(order), bool)
    start[1:] = g[1:] != g[:-1]
    keep = start | (shifted > prev)
    return order[keep]
