from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cv2xsim.mobility import (
    LEFT,
    RIGHT,
    STRAIGHT,
    DeadEndError,
    KraussParams,
    RoadNetwork,
    VehicleKinematics,
    World,
    choose_turn,
    count_overlaps,
    distance,
    krauss_step,
    spawn,
    step_all,
    trajectory_csv,
)


class FixedRng:
    def __init__(self, u=0.0):
        self.u = u

    def random(self):
        return self.u


def test_network_shape():
    net = RoadNetwork(5, 5, 250)
    assert net.is_connected()
    # 2 * (rows*(cols-1) + cols*(rows-1)) directed edges
    assert len(net) == 2 * (5 * 4 + 5 * 4)
    degrees = [len(v) for v in net.out_edges.values()]
    assert min(degrees) == 2 and max(degrees) == 4
    with pytest.raises(ValueError):
        RoadNetwork(1, 5)


def test_turn_options_geometry():
    net = RoadNetwork(3, 3, 100)
    # heading east (+col) along the middle row into the centre node
    e = net._by_nodes[((1, 0), (1, 1))]
    opts = net.options(e)
    # x grows with column, y with row: left of +x is +y
    assert net.edges[opts[STRAIGHT]][1] == (1, 2)
    assert net.edges[opts[LEFT]][1] == (2, 1)
    assert net.edges[opts[RIGHT]][1] == (0, 1)
    # into a corner only a single turn remains... and into an edge node two
    e = net._by_nodes[((0, 1), (0, 2))]
    assert set(net.options(e)) == {LEFT}
    e = net._by_nodes[((1, 0), (1, 1))]
    assert set(net.options(e)) == {LEFT, RIGHT, STRAIGHT}


def test_krauss_examples():
    p = KraussParams(sigma=0.0)
    v = VehicleKinematics(0, 0, 10.0, 0.0, params=p)
    krauss_step(v, None, 0.1, FixedRng(0.7))
    assert v.speed == pytest.approx(0.26)
    assert v.offset == pytest.approx(10.026)

    v = VehicleKinematics(0, 0, 10.0, p.v_max, params=p)
    for _ in range(30):
        krauss_step(v, None, 0.1, FixedRng(0.3))
    assert v.speed == pytest.approx(p.v_max)

    v = VehicleKinematics(0, 0, 10.0, 5.0, params=KraussParams())
    leader = VehicleKinematics(1, 0, 10.0 + KraussParams().spacing, 0.0)
    _, flag = krauss_step(v, leader, 0.1, FixedRng(0.5))
    assert v.speed == 0.0 and not flag

    v = VehicleKinematics(0, 0, 10.0, 5.0)
    leader = VehicleKinematics(1, 0, 12.0, 0.0)
    _, flag = krauss_step(v, leader, 0.1, FixedRng(0.5))
    assert flag and v.speed == 0.0
    with pytest.raises(ValueError):
        krauss_step(v, None, 0.0, FixedRng())


def test_choose_turn_frequencies():
    rng = np.random.default_rng(42)
    n = 100_000
    c = Counter(choose_turn(rng) for _ in range(n))
    for turn, p in ((LEFT, 0.25), (RIGHT, 0.25), (STRAIGHT, 0.5)):
        assert abs(c[turn] / n - p) <= 0.01
    c = Counter(choose_turn(rng, (RIGHT, STRAIGHT)) for _ in range(30_000))
    assert abs(c[RIGHT] / 30_000 - 1 / 3) <= 0.01
    assert LEFT not in c
    with pytest.raises(DeadEndError):
        choose_turn(rng, ())
    a = [choose_turn(np.random.default_rng(7)) for _ in range(5)]
    b = [choose_turn(np.random.default_rng(7)) for _ in range(5)]
    assert a == b


def test_single_vehicle_reaches_vmax():
    net = RoadNetwork(5, 5, 250)
    world = spawn(net, 1, np.random.default_rng(0), KraussParams(sigma=0.0))
    for _ in range(200):
        step_all(world, 0.1, np.random.default_rng(1))
    assert world.vehicles[0].speed == pytest.approx(13.9)


def test_queue_behind_slow_leader():
    net = RoadNetwork(3, 3, 1000)
    p = KraussParams()
    e = 0
    vs = [
        VehicleKinematics(0, e, 5.0, 13.9, params=p),
        VehicleKinematics(1, e, 20.0, 13.9, params=p),
        VehicleKinematics(2, e, 40.0, 0.0, params=KraussParams(v_max=1.0)),
    ]
    world = World(net, vs)
    for v in vs:
        v.next_edge = net.options(e)[next(iter(net.options(e)))]
        v.planned_turn = ((), STRAIGHT)
    rng = np.random.default_rng(3)
    for _ in range(300):
        step_all(world, 0.1, rng)
        lane = world.lanes[e]
        for a, b in zip(lane, lane[1:]):
            assert world.vehicles[b].offset - world.vehicles[a].offset >= p.spacing - 1e-9
    assert world.overlap_events == 0


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31), st.integers(10, 75))
def test_world_invariants(seed, n):
    rng = np.random.default_rng(seed)
    world = spawn(RoadNetwork(), n, rng)
    p = KraussParams()
    for _ in range(100):
        step_all(world, 0.1, rng)
        assert len(world.vehicles) == n
        assert sum(len(l) for l in world.lanes.values()) == n
        speeds = world.speeds()
        assert np.all(speeds >= 0) and np.all(speeds <= p.v_max + 1e-12)
        for v in world.vehicles:
            assert 0 <= v.offset < world.network.block
    assert world.overlap_events == 0 and count_overlaps(world) == 0


def test_determinism_and_positions():
    def traj(seed):
        rng = np.random.default_rng(seed)
        w = spawn(RoadNetwork(), 30, rng)
        for _ in range(50):
            step_all(w, 0.1, rng)
        return w.positions()

    assert np.array_equal(traj(5), traj(5))
    pos = traj(5)
    assert pos.min() >= 0 and pos.max() <= 1000


def test_distance_and_csv():
    assert distance((0, 0), (0, 0)) == 0
    assert distance((0, 0), (3, 4)) == 5
    assert distance((1, 2), (7, -3)) == distance((7, -3), (1, 2))
    text = trajectory_csv([(0.1, 0, 1.0, 2.0, 3.0)])
    assert text.splitlines() == ["time,vehicle,x,y,speed", "0.1,0,1.000,2.000,3.000"]


def test_spawn_rejects_overfull():
    with pytest.raises(ValueError):
        spawn(RoadNetwork(2, 2, 20), 50, np.random.default_rng(0))
