"""Manhattan road lattice, vehicle mobility and per-round role assignment.

The lattice is a torus: ``grid_rows`` horizontal and ``grid_cols`` vertical
roads spaced ``block_length`` apart, centred on the origin. A vehicle that
drives off one edge re-enters on the opposite edge, so density is constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import ConfigurationError

HEADINGS = {"N": (0.0, 1.0), "S": (0.0, -1.0), "E": (1.0, 0.0), "W": (-1.0, 0.0)}
LEFT_OF = {"N": "W", "W": "S", "S": "E", "E": "N"}
RIGHT_OF = {v: k for k, v in LEFT_OF.items()}

# straight / left / right at an intersection
TURN_PROBS = (0.5, 0.25, 0.25)

SOV = "SOV"
OPV = "OPV"

V_FLOOR = 0.1
T_MAX_SECONDS = 100.0   # round length cap (and the v = 0 round length)


@dataclass(frozen=True)
class RoadNetwork:
    grid_rows: int
    grid_cols: int
    block_length: float
    rsu_radius: float
    rsu_position: tuple = (0.0, 0.0)

    @property
    def width(self) -> float:
        return self.grid_cols * self.block_length

    @property
    def height(self) -> float:
        return self.grid_rows * self.block_length

    @cached_property
    def road_xs(self) -> np.ndarray:
        """x coordinates of the vertical roads."""
        return (np.arange(self.grid_cols) - (self.grid_cols - 1) / 2.0) * self.block_length

    @cached_property
    def road_ys(self) -> np.ndarray:
        """y coordinates of the horizontal roads."""
        return (np.arange(self.grid_rows) - (self.grid_rows - 1) / 2.0) * self.block_length

    def distance_to_road(self, point) -> float:
        x, y = point
        dx = np.min(np.abs(self.road_xs - x))
        dy = np.min(np.abs(self.road_ys - y))
        return float(min(dx, dy))

    def wrap(self, x: float, y: float) -> tuple:
        hw, hh = self.width / 2.0, self.height / 2.0
        return ((x + hw) % self.width) - hw, ((y + hh) % self.height) - hh

    def in_coverage(self, point) -> bool:
        rx, ry = self.rsu_position
        return math.hypot(point[0] - rx, point[1] - ry) <= self.rsu_radius


@dataclass(frozen=True)
class Vehicle:
    id: int
    position: tuple
    speed: float
    heading: str
    role: str = OPV
    dataset_size: int = 1
    energy_budget: float = 0.075
    p_max: float = 0.3
    clock_frequency: float = 1e9


@dataclass(frozen=True)
class ScenarioState:
    network: RoadNetwork
    vehicles: tuple
    time: float = 0.0
    round_index: int = 0

    def positions(self) -> np.ndarray:
        return np.array([v.position for v in self.vehicles], dtype=float).reshape(-1, 2)

    def by_id(self, vid: int) -> Vehicle:
        for v in self.vehicles:
            if v.id == vid:
                return v
        raise KeyError(vid)


def build_network(rows: int, cols: int, block_length: float, rsu_radius: float) -> RoadNetwork:
    """Build the road lattice and place the RSU at its centre.

    When the geometric centre is not on a road (even grid counts) the RSU is
    snapped to the nearest road point, preferring horizontal roads on ties.
    """
    if rows < 1 or cols < 1:
        raise ConfigurationError(f"grid must be at least 1x1, got {rows}x{cols}")
    if block_length <= 0 or rsu_radius <= 0:
        raise ConfigurationError("block_length and rsu_radius must be positive")
    net = RoadNetwork(int(rows), int(cols), float(block_length), float(rsu_radius))
    ys, xs = net.road_ys, net.road_xs
    iy = int(np.argmin(np.abs(ys)))
    ix = int(np.argmin(np.abs(xs)))
    if abs(ys[iy]) <= abs(xs[ix]):
        pos = (0.0, float(ys[iy]))
    else:
        pos = (float(xs[ix]), 0.0)
    return replace(net, rsu_position=pos)


HEADING_NAMES = ("N", "S", "E", "W")
_HEADING_INDEX = {h: i for i, h in enumerate(HEADING_NAMES)}
_DIRS = np.array([HEADINGS[h] for h in HEADING_NAMES])
_LEFT = np.array([_HEADING_INDEX[LEFT_OF[h]] for h in HEADING_NAMES])
_RIGHT = np.array([_HEADING_INDEX[RIGHT_OF[h]] for h in HEADING_NAMES])


def _gap_ahead(coord, roads, period, sign):
    """Distance to, and index of, the next cross-road strictly ahead (vectorised)."""
    gaps = ((roads[None, :] - coord[:, None]) * sign[:, None]) % period
    gaps = np.where(gaps <= 1e-12, period, gaps)
    j = np.argmin(gaps, axis=1)
    return gaps[np.arange(len(coord)), j], j


def advance(positions: np.ndarray, headings: np.ndarray, speeds: np.ndarray,
            network: RoadNetwork, dt: float, rng):
    """Move vehicles held as arrays; returns new (positions, headings).

    ``headings`` are indices into ``HEADING_NAMES``. Every intersection
    crossed consumes one uniform draw, in vehicle order.
    """
    pos = np.array(positions, dtype=float).reshape(-1, 2)
    hd = np.array(headings, dtype=int)
    remaining = np.asarray(speeds, dtype=float) * dt
    xs, ys = network.road_xs, network.road_ys
    active = remaining > 0
    while active.any():
        idx = np.flatnonzero(active)
        d = _DIRS[hd[idx]]
        horiz = d[:, 0] != 0
        gap = np.empty(len(idx))
        road = np.empty(len(idx), dtype=int)
        if horiz.any():
            gap[horiz], road[horiz] = _gap_ahead(pos[idx[horiz], 0], xs, network.width, d[horiz, 0])
        if (~horiz).any():
            gap[~horiz], road[~horiz] = _gap_ahead(pos[idx[~horiz], 1], ys, network.height, d[~horiz, 1])
        rem = remaining[idx]
        stop = rem < gap
        mv = idx[stop]
        if len(mv):
            pos[mv] += d[stop] * rem[stop, None]
            remaining[mv] = 0.0
        cr = ~stop
        ci = idx[cr]
        if len(ci):
            # land exactly on the intersection to keep the lattice invariant
            h = horiz[cr]
            pos[ci[h], 0] = xs[road[cr][h]]
            pos[ci[~h], 1] = ys[road[cr][~h]]
            remaining[ci] -= gap[cr]
            u = rng.random(len(ci))
            old = hd[ci]
            hd[ci] = np.where(u < TURN_PROBS[0], old,
                              np.where(u < TURN_PROBS[0] + TURN_PROBS[1], _LEFT[old], _RIGHT[old]))
        active = remaining > 0
    hw, hh = network.width / 2.0, network.height / 2.0
    pos[:, 0] = ((pos[:, 0] + hw) % network.width) - hw
    pos[:, 1] = ((pos[:, 1] + hh) % network.height) - hh
    return pos, hd


def move_vehicle(vehicle: Vehicle, network: RoadNetwork, dt: float, rng) -> Vehicle:
    pos, hd = advance([vehicle.position], [_HEADING_INDEX[vehicle.heading]], [vehicle.speed],
                      network, dt, rng)
    return replace(vehicle, position=(float(pos[0, 0]), float(pos[0, 1])), heading=HEADING_NAMES[hd[0]])


def step_vehicles(state: ScenarioState, dt: float, rng) -> ScenarioState:
    """Advance every vehicle by ``speed * dt`` along the lattice."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    vs = state.vehicles
    pos, hd = advance(state.positions(), [_HEADING_INDEX[v.heading] for v in vs],
                      [v.speed for v in vs], state.network, dt, rng)
    moved = tuple(replace(v, position=(float(p[0]), float(p[1])), heading=HEADING_NAMES[h])
                  for v, p, h in zip(vs, pos, hd))
    return replace(state, vehicles=moved, time=state.time + dt)


def classify_round(state: ScenarioState, participation_prob: float, rng):
    """Assign SOV/OPV roles for a new round.

    Every in-coverage vehicle independently becomes an SOV with probability
    ``participation_prob``; everyone else is an OPV. Returns the updated
    state and the two id tuples.
    """
    if not 0.0 <= participation_prob <= 1.0:
        raise ConfigurationError("participation_prob must lie in [0, 1]")
    sovs, opvs, updated = [], [], []
    for v in state.vehicles:
        role = OPV
        if state.network.in_coverage(v.position) and rng.random() < participation_prob:
            role = SOV
        (sovs if role == SOV else opvs).append(v.id)
        updated.append(replace(v, role=role))
    new_state = replace(state, vehicles=tuple(updated), round_index=state.round_index + 1)
    return new_state, tuple(sovs), tuple(opvs)


def mean_chord_length(radius: float) -> float:
    # mean chord of a disc under isotropic uniform random lines
    return math.pi * radius / 2.0


def estimate_round_slots(network: RoadNetwork, v: float, kappa: float,
                         t_max: int = None, v_floor: float = V_FLOOR) -> int:
    """Round length in slots from the average sojourn time in the coverage disc.

    ``t_max`` defaults to ``T_MAX_SECONDS`` worth of slots.
    """
    if v < 0 or kappa <= 0:
        raise ConfigurationError("need v >= 0 and kappa > 0")
    if t_max is None:
        t_max = math.ceil(T_MAX_SECONDS / kappa - 1e-9)
    if v == 0:
        return int(t_max)
    slots = mean_chord_length(network.rsu_radius) / max(v, v_floor) / kappa
    return int(min(math.ceil(slots - 1e-9), t_max))


def random_road_point(network: RoadNetwork, rng):
    """Uniform point on the lattice with a heading along its road."""
    n_h, n_v = network.grid_rows, network.grid_cols
    total = n_h * network.width + n_v * network.height
    if rng.random() * total < n_h * network.width:
        y = float(network.road_ys[rng.integers(n_h)])
        x = float(rng.uniform(-network.width / 2, network.width / 2))
        heading = "E" if rng.random() < 0.5 else "W"
    else:
        x = float(network.road_xs[rng.integers(n_v)])
        y = float(rng.uniform(-network.height / 2, network.height / 2))
        heading = "N" if rng.random() < 0.5 else "S"
    return (x, y), heading


def populate(network: RoadNetwork, n_vehicles: int, speed: float, rng, *,
             speed_jitter: float = 0.0,
             budget_range=(0.05, 0.1),
             p_max: float = 0.3,
             clock_range=(0.5e9, 1.0e9),
             dataset_size: int = 1250) -> ScenarioState:
    """Drop ``n_vehicles`` uniformly on the roads with per-vehicle attributes."""
    if n_vehicles < 0:
        raise ConfigurationError("n_vehicles must be non-negative")
    vehicles = []
    for vid in range(n_vehicles):
        pos, heading = random_road_point(network, rng)
        s = speed
        if speed_jitter > 0:
            s = speed * (1.0 + rng.uniform(-speed_jitter, speed_jitter))
        vehicles.append(Vehicle(
            id=vid,
            position=pos,
            speed=float(max(s, 0.0)),
            heading=heading,
            dataset_size=int(dataset_size),
            energy_budget=float(rng.uniform(*budget_range)),
            p_max=float(p_max),
            clock_frequency=float(rng.uniform(*clock_range)),
        ))
    return ScenarioState(network=network, vehicles=tuple(vehicles))

