"""Urban V2X link gains: 3GPP TR 37.885 pathloss, log-normal shadowing, vehicle blockage."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Mapping, Optional

import numpy as np

from .errors import DomainError
from .scenario import RoadNetwork, ScenarioState


class LosClass(IntEnum):
    LOS = 0
    NLOSV = 1
    NLOS = 2


@dataclass(frozen=True)
class ChannelConfig:
    carrier_ghz: float = 5.9
    shadow_std_los_db: float = 3.0
    shadow_std_nlos_db: float = 4.0
    blockage_mean_db: float = 5.0
    blockage_std_db: float = 2.0
    blockage_width: float = 2.0
    road_width: float = 10.0
    v2v_range: float = 300.0
    min_distance: float = 1.0
    shadowing: bool = True
    blockage: bool = True


@dataclass(frozen=True)
class LinkGain:
    gain: float
    los_class: LosClass


def _check_positive(d, gamma):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("distance must be positive")
    if np.any(np.asarray(gamma) <= 0):
        raise DomainError("carrier frequency must be positive")
    return d


def pathloss_los(d, gamma):
    """LOS (and NLOSv) pathloss in dB; ``d`` in metres, ``gamma`` in GHz."""
    d = _check_positive(d, gamma)
    out = 38.77 + 16.7 * np.log10(d) + 18.2 * np.log10(gamma)
    return float(out) if out.ndim == 0 else out


def pathloss_nlos(d, gamma):
    d = _check_positive(d, gamma)
    out = 36.85 + 30.0 * np.log10(d) + 18.9 * np.log10(gamma)
    return float(out) if out.ndim == 0 else out


def db_to_linear(db):
    return np.power(10.0, -np.asarray(db, dtype=float) / 10.0)


@lru_cache(maxsize=64)
def block_rectangles(network: RoadNetwork, road_width: float) -> np.ndarray:
    """Off-road building blocks as (xmin, xmax, ymin, ymax) rows.

    Blocks split by the torus seam are returned as two rectangles.
    """
    hw = road_width / 2.0

    def intervals(roads, period):
        lo, hi = -period / 2.0, period / 2.0
        edges = []
        for a, b in zip(roads[:-1], roads[1:]):
            edges.append((a + hw, b - hw))
        edges.append((lo, roads[0] - hw))
        edges.append((roads[-1] + hw, hi))
        return [(a, b) for a, b in edges if b > a]

    xi = intervals(network.road_xs, network.width)
    yi = intervals(network.road_ys, network.height)
    rects = [(x0, x1, y0, y1) for (x0, x1) in xi for (y0, y1) in yi]
    return np.array(rects, dtype=float).reshape(-1, 4)


def _crosses_blocks(p0: np.ndarray, p1: np.ndarray, rects: np.ndarray) -> np.ndarray:
    """True where segment p0->p1 passes through the open interior of any rectangle."""
    out = np.zeros(len(p0), dtype=bool)
    if rects.size == 0 or p0.size == 0:
        return out
    # only (segment, rectangle) pairs whose bounding boxes overlap can cross
    lo_xy = np.minimum(p0, p1) - 1e-6
    hi_xy = np.maximum(p0, p1) + 1e-6
    seg, rec = np.nonzero((lo_xy[:, 0:1] < rects[:, 1]) & (hi_xy[:, 0:1] > rects[:, 0])
                          & (lo_xy[:, 1:2] < rects[:, 3]) & (hi_xy[:, 1:2] > rects[:, 2]))
    if len(seg) == 0:
        return out
    a, b, r = p0[seg], p1[seg], rects[rec]
    lo = np.zeros(len(seg))
    hi = np.ones(len(seg))
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in (0, 1):
            d = b[:, k] - a[:, k]
            o, rmin, rmax = a[:, k], r[:, 2 * k], r[:, 2 * k + 1]
            flat = d == 0
            t1 = (rmin - o) / d
            t2 = (rmax - o) / d
            tlo = np.where(flat, -np.inf, np.minimum(t1, t2))
            thi = np.where(flat, np.inf, np.maximum(t1, t2))
            inside = (o > rmin) & (o < rmax)
            # a segment parallel to the slab must start strictly inside it
            tlo = np.where(flat & ~inside, np.inf, tlo)
            lo = np.maximum(lo, tlo)
            hi = np.minimum(hi, thi)
    out[seg[hi - lo > 1e-12]] = True
    return out


def _blocker_counts(p0, p1, vehicles, tx_idx, rx_idx, width):
    """Number of vehicles (other than the endpoints) within ``width`` of each segment."""
    if len(vehicles) == 0 or len(p0) == 0:
        return np.zeros(len(p0), dtype=int)
    lo_xy = np.minimum(p0, p1) - (width + 1e-6)
    hi_xy = np.maximum(p0, p1) + (width + 1e-6)
    vx, vy = vehicles[None, :, 0], vehicles[None, :, 1]
    near = (vx > lo_xy[:, 0:1]) & (vx < hi_xy[:, 0:1]) & (vy > lo_xy[:, 1:2]) & (vy < hi_xy[:, 1:2])
    seg, veh = np.nonzero(near)
    keep = (veh != tx_idx[seg]) & (veh != rx_idx[seg])
    seg, veh = seg[keep], veh[keep]
    sx = p1[seg, 0] - p0[seg, 0]
    sy = p1[seg, 1] - p0[seg, 1]
    len2 = sx * sx + sy * sy
    rx = vehicles[veh, 0] - p0[seg, 0]
    ry = vehicles[veh, 1] - p0[seg, 1]
    dot = rx * sx + ry * sy
    cross = rx * sy - ry * sx
    # 0 < t < 1 and perpendicular distance <= width, without dividing
    hit = (dot > 0) & (dot < len2) & (cross * cross <= width * width * len2)
    return np.bincount(seg[hit], minlength=len(p0))


def classify_links(p0, p1, vehicles, tx_idx, rx_idx, network: RoadNetwork,
                   config: ChannelConfig = ChannelConfig()):
    """Vectorised LOS classification. Returns (classes, blocker counts)."""
    p0 = np.asarray(p0, dtype=float).reshape(-1, 2)
    p1 = np.asarray(p1, dtype=float).reshape(-1, 2)
    vehicles = np.asarray(vehicles, dtype=float).reshape(-1, 2)
    nlos = _crosses_blocks(p0, p1, block_rectangles(network, config.road_width))
    blockers = _blocker_counts(p0, p1, vehicles, np.asarray(tx_idx), np.asarray(rx_idx),
                               config.blockage_width)
    blockers = np.where(nlos, 0, blockers)
    classes = np.where(nlos, LosClass.NLOS, np.where(blockers > 0, LosClass.NLOSV, LosClass.LOS))
    return classes.astype(int), blockers


def classify_los(tx, rx, vehicles, network: RoadNetwork,
                 config: ChannelConfig = ChannelConfig()) -> LosClass:
    """Classify one link; ``vehicles`` are potential blockers (endpoints excluded)."""
    if tuple(tx) == tuple(rx):
        raise DomainError("tx and rx coincide")
    veh = np.asarray(vehicles, dtype=float).reshape(-1, 2)
    # drop vehicles sitting on an endpoint
    keep = ~(np.all(np.isclose(veh, tx), axis=1) | np.all(np.isclose(veh, rx), axis=1))
    classes, _ = classify_links([tx], [rx], veh[keep], [-1], [-1], network, config)
    return LosClass(int(classes[0]))


def link_losses(distance, classes, blockers, config: ChannelConfig, rng):
    """Total loss in dB for a batch of links. Draw order is fixed for reproducibility."""
    d = np.maximum(np.asarray(distance, dtype=float), config.min_distance)
    classes = np.asarray(classes)
    pl = np.where(classes == LosClass.NLOS,
                  pathloss_nlos(d, config.carrier_ghz),
                  pathloss_los(d, config.carrier_ghz))
    pl = np.atleast_1d(pl)
    z = rng.standard_normal(len(d))
    if config.shadowing:
        std = np.where(classes == LosClass.NLOS, config.shadow_std_nlos_db, config.shadow_std_los_db)
        pl = pl + std * z
    counts = np.asarray(blockers, dtype=int)
    draws = rng.normal(config.blockage_mean_db, config.blockage_std_db, size=int(counts.sum()))
    if config.blockage and counts.sum() > 0:
        extra = np.maximum(draws, 0.0)
        owner = np.repeat(np.arange(len(d)), counts)
        pl = pl + np.bincount(owner, weights=extra, minlength=len(d))
    return pl


def sample_gain(tx, rx, vehicles, gamma: float, rng, network: RoadNetwork,
                config: ChannelConfig = ChannelConfig()) -> LinkGain:
    """Draw one link gain |h|^2 (linear)."""
    cfg = config if gamma == config.carrier_ghz else _with(config, carrier_ghz=gamma)
    veh = np.asarray(vehicles, dtype=float).reshape(-1, 2)
    keep = ~(np.all(np.isclose(veh, tx), axis=1) | np.all(np.isclose(veh, rx), axis=1))
    classes, blockers = classify_links([tx], [rx], veh[keep], [-1], [-1], network, cfg)
    d = np.hypot(rx[0] - tx[0], rx[1] - tx[1])
    loss = link_losses([d], classes, blockers, cfg, rng)
    return LinkGain(float(db_to_linear(loss[0])), LosClass(int(classes[0])))


def _with(config, **kw):
    from dataclasses import replace
    return replace(config, **kw)


@dataclass(frozen=True)
class ChannelSnapshot:
    """Link gains of one slot; arrays are indexed by position in ``sov_ids``/``opv_ids``."""
    slot: int
    sov_ids: tuple
    opv_ids: tuple
    v2i: np.ndarray
    opv2i: np.ndarray
    v2v: np.ndarray
    v2i_class: np.ndarray = None
    opv2i_class: np.ndarray = None
    v2v_class: np.ndarray = None

    @property
    def v2i_gains(self) -> Mapping[int, LinkGain]:
        return {m: LinkGain(float(self.v2i[i]), LosClass(int(self.v2i_class[i])))
                for i, m in enumerate(self.sov_ids)}

    @property
    def opv2i_gains(self) -> Mapping[int, LinkGain]:
        return {n: LinkGain(float(self.opv2i[j]), LosClass(int(self.opv2i_class[j])))
                for j, n in enumerate(self.opv_ids)}

    @property
    def v2v_gains(self) -> Mapping[tuple, LinkGain]:
        return {(m, n): LinkGain(float(self.v2v[i, j]), LosClass(int(self.v2v_class[i, j])))
                for i, m in enumerate(self.sov_ids) for j, n in enumerate(self.opv_ids)}

    def v2i_of(self, m) -> float:
        return float(self.v2i[self.sov_ids.index(m)])

    def opv2i_of(self, n) -> float:
        return float(self.opv2i[self.opv_ids.index(n)])

    def v2v_of(self, m, n) -> float:
        return float(self.v2v[self.sov_ids.index(m), self.opv_ids.index(n)])

    def n_entries(self) -> int:
        return self.v2i.size + self.opv2i.size + self.v2v.size


def snapshot(state: ScenarioState, sovs, opvs, rng, config: ChannelConfig = ChannelConfig(),
             slot: int = 0, positions: Optional[np.ndarray] = None) -> ChannelSnapshot:
    """Draw all SOV->RSU, OPV->RSU and SOV->OPV gains for one slot.

    V2I gains of vehicles outside RSU coverage and V2V gains beyond
    ``config.v2v_range`` are exactly zero. Random draws are made for every
    link regardless, so the stream does not depend on who is in range.
    """
    net = state.network
    pos = state.positions() if positions is None else np.asarray(positions, dtype=float)
    index = {v.id: i for i, v in enumerate(state.vehicles)}
    si = np.array([index[m] for m in sovs], dtype=int)
    ui = np.array([index[n] for n in opvs], dtype=int)
    S, U = len(si), len(ui)
    rsu = np.asarray(net.rsu_position, dtype=float)

    tx = np.concatenate([si, ui, np.repeat(si, U)])
    rx = np.concatenate([np.full(S + U, -1), np.tile(ui, S)])
    p0 = pos[tx] if len(tx) else np.zeros((0, 2))
    p1 = np.where(rx[:, None] >= 0, pos[np.maximum(rx, 0)] if len(pos) else 0.0, rsu[None, :])
    classes, blockers = classify_links(p0, p1, pos, tx, rx, net, config)
    dist = np.hypot(*(p1 - p0).T)
    losses = link_losses(dist, classes, blockers, config, rng) if len(dist) else np.zeros(0)
    gains = db_to_linear(losses)

    to_rsu = np.hypot(*(p0[: S + U] - rsu).T) if S + U else np.zeros(0)
    gains[: S + U] = np.where(to_rsu <= net.rsu_radius, gains[: S + U], 0.0)
    gains[S + U:] = np.where(dist[S + U:] <= config.v2v_range, gains[S + U:], 0.0)

    return ChannelSnapshot(
        slot=slot,
        sov_ids=tuple(sovs),
        opv_ids=tuple(opvs),
        v2i=gains[:S].copy(),
        opv2i=gains[S:S + U].copy(),
        v2v=gains[S + U:].reshape(S, U).copy(),
        v2i_class=classes[:S].copy(),
        opv2i_class=classes[S:S + U].copy(),
        v2v_class=classes[S + U:].reshape(S, U).copy(),
    )
