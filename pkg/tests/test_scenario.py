import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vedsim.errors import ConfigurationError
from vedsim.scenario import (HEADING_NAMES, SOV, ScenarioState, Vehicle, advance, build_network,
                             classify_round, estimate_round_slots, move_vehicle, populate, step_vehicles)


def test_single_intersection_network():
    net = build_network(1, 1, 200.0, 150.0)
    assert net.rsu_position == (0.0, 0.0)
    assert net.distance_to_road(net.rsu_position) == 0.0


def test_odd_grid_puts_rsu_on_centre_intersection():
    net = build_network(3, 3, 250.0, 300.0)
    assert net.rsu_position == (0.0, 0.0)
    assert 0.0 in net.road_xs and 0.0 in net.road_ys


def test_even_grid_rsu_snapped_to_road():
    net = build_network(2, 4, 100.0, 200.0)
    # geometric centre (0, 0) lies mid-block, so the RSU must move onto a road
    assert net.distance_to_road(net.rsu_position) == 0.0
    assert math.hypot(*net.rsu_position) == pytest.approx(50.0)


@pytest.mark.parametrize("args", [(0, 3, 250, 300), (3, 0, 250, 300), (3, 3, 0, 300), (3, 3, 250, -1)])
def test_bad_network_rejected(args):
    with pytest.raises(ConfigurationError):
        build_network(*args)


def _state(net, pos, heading, speed):
    return ScenarioState(net, (Vehicle(0, pos, speed, heading),))


def test_straight_motion_mid_block():
    net = build_network(3, 3, 250.0, 300.0)
    st_ = step_vehicles(_state(net, (100.0, 0.0), "E", 10.0), 0.1, np.random.default_rng(0))
    assert st_.vehicles[0].position == pytest.approx((101.0, 0.0))
    assert st_.time == pytest.approx(0.1)


def test_stationary_vehicle_does_not_move():
    net = build_network(3, 3, 250.0, 300.0)
    v = move_vehicle(Vehicle(0, (40.0, 0.0), 0.0, "W"), net, 5.0, np.random.default_rng(1))
    assert v.position == (40.0, 0.0)


def test_crossing_intersection_is_reproducible():
    net = build_network(3, 3, 250.0, 300.0)
    start = Vehicle(0, (-0.5, 0.0), 10.0, "E")
    a = move_vehicle(start, net, 0.1, np.random.default_rng(7))
    b = move_vehicle(start, net, 0.1, np.random.default_rng(7))
    assert a == b
    # 0.5 m to the crossing, then 0.5 m along the chosen road
    assert abs(a.position[0]) + abs(a.position[1]) == pytest.approx(0.5)


def test_turn_frequencies():
    net = build_network(3, 3, 250.0, 300.0)
    n = 100_000
    pos = np.tile([[-0.5, 0.0]], (n, 1))
    _, hd = advance(pos, np.full(n, HEADING_NAMES.index("E")), np.full(n, 10.0), net, 0.1,
                    np.random.default_rng(3))
    freq = {h: np.mean(hd == HEADING_NAMES.index(h)) for h in ("E", "N", "S")}
    assert freq["E"] == pytest.approx(0.5, abs=0.01)
    assert freq["N"] == pytest.approx(0.25, abs=0.01)
    assert freq["S"] == pytest.approx(0.25, abs=0.01)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), dt=st.floats(0.01, 30.0), speed=st.floats(0.0, 40.0))
def test_vehicles_stay_on_roads(seed, dt, speed):
    net = build_network(3, 4, 250.0, 300.0)
    rng = np.random.default_rng(seed)
    state = populate(net, 12, speed, rng)
    moved = step_vehicles(state, dt, rng)
    for v in moved.vehicles:
        assert net.distance_to_road(v.position) < 1e-6
        assert abs(v.position[0]) <= net.width / 2 + 1e-9
        assert abs(v.position[1]) <= net.height / 2 + 1e-9


def test_classify_all_or_nothing():
    net = build_network(3, 3, 250.0, 300.0)
    state = populate(net, 40, 10.0, np.random.default_rng(0))
    covered = {v.id for v in state.vehicles if net.in_coverage(v.position)}
    s1, sovs, opvs = classify_round(state, 1.0, np.random.default_rng(1))
    assert set(sovs) == covered and set(sovs) | set(opvs) == {v.id for v in state.vehicles}
    assert all(v.role == SOV for v in s1.vehicles if v.id in covered)
    _, sovs0, opvs0 = classify_round(state, 0.0, np.random.default_rng(1))
    assert sovs0 == () and len(opvs0) == 40


def test_classify_binomial_mean():
    net = build_network(3, 3, 250.0, 300.0)
    state = populate(net, 40, 10.0, np.random.default_rng(0))
    covered = sum(net.in_coverage(v.position) for v in state.vehicles)
    rng = np.random.default_rng(2)
    counts = [len(classify_round(state, 0.5, rng)[1]) for _ in range(10_000)]
    assert np.mean(counts) == pytest.approx(covered / 2, rel=0.02)


def test_round_slots_examples():
    net = build_network(3, 3, 250.0, 300.0)
    assert estimate_round_slots(net, 10.0, 0.1) == 472
    assert estimate_round_slots(net, 0.0, 0.1, t_max=777) == 777
    # the default cap is a fixed wall-clock length
    assert estimate_round_slots(net, 0.0, 0.1) == 1000
    assert estimate_round_slots(net, 0.0, 0.02) == 5000


def test_mean_chord_matches_monte_carlo():
    # random straight crossings of a disc: uniform offset, chord = 2 sqrt(r^2 - b^2)
    rng = np.random.default_rng(0)
    r = 300.0
    b = rng.uniform(-r, r, 200_000)
    assert np.mean(2 * np.sqrt(r * r - b * b)) == pytest.approx(math.pi * r / 2, rel=5e-3)
