"""Manhattan-grid mobility with Krauss car following.

Every road segment between neighbouring intersections carries two directed
single-lane edges. Offsets are measured along the edge from its start node;
a vehicle's offset is its front bumper. Vehicles decide their turn when they
enter an edge, so the leader on the next edge is known while approaching the
intersection.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

LEFT, RIGHT, STRAIGHT = "left", "right", "straight"
TURNS = (LEFT, RIGHT, STRAIGHT)
TURN_PROBS = {LEFT: 0.25, RIGHT: 0.25, STRAIGHT: 0.5}


@dataclass
class KraussParams:
    accel: float = 2.6
    decel: float = 4.5
    v_max: float = 13.9
    tau: float = 1.0
    sigma: float = 0.5  # driver imperfection
    length: float = 5.0
    min_gap: float = 2.5

    @property
    def spacing(self) -> float:
        return self.length + self.min_gap


@dataclass
class VehicleKinematics:
    vid: int
    edge: int
    offset: float
    speed: float = 0.0
    next_edge: Optional[int] = None
    params: KraussParams = field(default_factory=KraussParams)
    planned_turn: tuple = ()  # (available turns, choice) at the end of this edge


class RoadNetwork:
    """``rows x cols`` intersections spaced ``block`` metres apart."""

    def __init__(self, rows: int = 5, cols: int = 5, block: float = 250.0):
        if rows < 2 or cols < 2:
            raise ValueError("grid needs at least 2x2 intersections")
        if block <= 0:
            raise ValueError("block length must be positive")
        self.rows, self.cols, self.block = rows, cols, block
        self.edges: list[tuple[tuple[int, int], tuple[int, int]]] = []
        self.out_edges: dict[tuple[int, int], list[int]] = {}
        self._by_nodes: dict[tuple, int] = {}
        for r in range(rows):
            for c in range(cols):
                self.out_edges[(r, c)] = []
        for r in range(rows):
            for c in range(cols):
                for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols:
                        eid = len(self.edges)
                        self.edges.append(((r, c), (rr, cc)))
                        self.out_edges[(r, c)].append(eid)
                        self._by_nodes[((r, c), (rr, cc))] = eid

    def __len__(self):
        return len(self.edges)

    def edge_length(self, eid: int) -> float:
        return self.block

    def heading(self, eid: int) -> tuple[int, int]:
        (r0, c0), (r1, c1) = self.edges[eid]
        return r1 - r0, c1 - c0

    def options(self, eid: int) -> dict[str, int]:
        """Available turns at the end of ``eid`` mapped to the outgoing edge."""
        (_, _), node = self.edges[eid]
        dr, dc = self.heading(eid)
        # x grows with column, y grows with row; left is a +90 degree rotation
        moves = {
            STRAIGHT: (dr, dc),
            LEFT: (dc, -dr),
            RIGHT: (-dc, dr),
        }
        out = {}
        for turn in TURNS:
            mr, mc = moves[turn]
            target = (node[0] + mr, node[1] + mc)
            eid2 = self._by_nodes.get((node, target))
            if eid2 is not None:
                out[turn] = eid2
        return out

    def position(self, eid: int, offset: float) -> tuple[float, float]:
        (r0, c0), (r1, c1) = self.edges[eid]
        f = offset / self.block
        x = (c0 + (c1 - c0) * f) * self.block
        y = (r0 + (r1 - r0) * f) * self.block
        return x, y

    def is_connected(self) -> bool:
        seen = {(0, 0)}
        stack = [(0, 0)]
        while stack:
            node = stack.pop()
            for eid in self.out_edges[node]:
                nxt = self.edges[eid][1]
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == self.rows * self.cols


class DeadEndError(RuntimeError):
    pass


def choose_turn(rng, available=TURNS) -> str:
    """Draw left/right/straight with 0.25/0.25/0.5, renormalised over ``available``."""
    avail = [t for t in TURNS if t in set(available)]
    if not avail:
        raise DeadEndError("no turn available")
    weights = np.array([TURN_PROBS[t] for t in avail])
    u = rng.random() * weights.sum()
    acc = 0.0
    for t, w in zip(avail, weights):
        acc += w
        if u < acc:
            return t
    return avail[-1]


def safe_speed(v: float, v_leader: float, gap: float, p: KraussParams) -> float:
    return v_leader + (gap - v_leader * p.tau) / ((v + v_leader) / (2.0 * p.decel) + p.tau)


def krauss_step(self: VehicleKinematics, leader: Optional[VehicleKinematics], dt: float, rng,
                gap: Optional[float] = None) -> tuple[VehicleKinematics, bool]:
    """Advance one vehicle by ``dt`` seconds.

    ``gap`` is the net gap to the leader (bumper to bumper minus ``min_gap``);
    when omitted it is computed for a leader on the same edge. Returns the
    updated kinematics and a flag set when the input gap was negative.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = self.params
    u = rng.random()
    overlap = False
    if leader is not None and gap is None:
        gap = leader.offset - self.offset - p.spacing
    if leader is None:
        v_safe = math.inf
    elif gap < 0:
        overlap = True
        self.speed = 0.0
        return self, overlap
    else:
        v_safe = safe_speed(self.speed, leader.speed, gap, p)
    v_des = min(self.speed + p.accel * dt, v_safe, p.v_max)
    if leader is not None:
        # never close more than the current gap within one step
        v_des = min(v_des, gap / dt)
    v_new = max(0.0, v_des - p.sigma * p.accel * dt * u)
    self.speed = v_new
    self.offset += v_new * dt
    return self, overlap


@dataclass
class TurnEvent:
    time: float
    vid: int
    options: tuple
    choice: str


class World:
    """All vehicles on a road network plus per-edge ordering."""

    def __init__(self, network: RoadNetwork, vehicles: list[VehicleKinematics]):
        self.network = network
        self.vehicles = vehicles
        self.time = 0.0
        self.lanes: dict[int, list[int]] = {e: [] for e in range(len(network))}
        for v in vehicles:
            self.lanes[v.edge].append(v.vid)
        for e in self.lanes:
            self._sort(e)
        self.turns: list[TurnEvent] = []
        self.overlap_events = 0
        self.yield_events = 0

    def _sort(self, e: int) -> None:
        self.lanes[e].sort(key=lambda vid: self.vehicles[vid].offset)

    def __len__(self):
        return len(self.vehicles)

    def positions(self) -> np.ndarray:
        return np.array([self.network.position(v.edge, v.offset) for v in self.vehicles])

    def speeds(self) -> np.ndarray:
        return np.array([v.speed for v in self.vehicles])


def spawn(network: RoadNetwork, n: int, rng, params: Optional[KraussParams] = None) -> World:
    """Place ``n`` stationary vehicles uniformly over the edges without overlap."""
    params = params or KraussParams()
    L = network.block
    if n * params.spacing > 0.5 * L * len(network):
        raise ValueError("too many vehicles for the network")
    vehicles = []
    taken: dict[int, list[float]] = {}
    while len(vehicles) < n:
        e = int(rng.integers(len(network)))
        off = float(rng.uniform(params.spacing, L))
        if any(abs(off - o) < params.spacing for o in taken.get(e, [])):
            continue
        taken.setdefault(e, []).append(off)
        v = VehicleKinematics(len(vehicles), e, off, 0.0, None, params)
        vehicles.append(v)
    world = World(network, vehicles)
    for v in vehicles:
        v.next_edge = _plan(world, v, rng)
    return world


def _plan(world: World, v: VehicleKinematics, rng) -> int:
    opts = world.network.options(v.edge)
    turn = choose_turn(rng, tuple(opts))
    v.planned_turn = (tuple(t for t in TURNS if t in opts), turn)
    return opts[turn]


def _leader(world: World, v: VehicleKinematics):
    """Leader and net gap: same edge first, otherwise the last car on the next edge."""
    lane = world.lanes[v.edge]
    i = lane.index(v.vid)
    p = v.params
    if i + 1 < len(lane):
        lead = world.vehicles[lane[i + 1]]
        return lead, lead.offset - v.offset - p.spacing, True
    nxt = world.lanes[v.next_edge]
    if nxt:
        lead = world.vehicles[nxt[0]]
        gap = world.network.edge_length(v.edge) - v.offset + lead.offset - p.spacing
        return lead, gap, False
    return None, None, False


def step_all(world: World, dt: float, rng) -> World:
    """Advance every vehicle by ``dt``; leaders move before their followers."""
    net = world.network
    order = []
    for e in range(len(net)):
        order.extend(reversed(world.lanes[e]))
    for vid in order:
        v = world.vehicles[vid]
        lead, gap, same_edge = _leader(world, v)
        if lead is not None and gap < 0 and not same_edge:
            # car from another approach just entered our next edge: wait
            world.yield_events += 1
            gap = 0.0
        _, overlap = krauss_step(v, lead, dt, rng, gap=gap)
        if overlap:
            world.overlap_events += 1
        L = net.edge_length(v.edge)
        if v.offset >= L:
            rest = v.offset - L
            old = v.edge
            options, choice = v.planned_turn
            world.lanes[old].remove(vid)
            v.edge = v.next_edge
            v.offset = rest
            world.lanes[v.edge].insert(0, vid)
            world.turns.append(TurnEvent(world.time + dt, vid, options, choice))
            v.next_edge = _plan(world, v, rng)
    world.time += dt
    world.overlap_events += count_overlaps(world)
    return world


def count_overlaps(world: World) -> int:
    """Pairs on one edge closer than ``length + min_gap`` (should stay 0)."""
    bad = 0
    for lane in world.lanes.values():
        for a, b in zip(lane, lane[1:]):
            va, vb = world.vehicles[a], world.vehicles[b]
            if vb.offset - va.offset < va.params.spacing - 1e-9:
                bad += 1
    return bad


def distance(a, b) -> float:
    """Euclidean distance between two planar points (or objects with ``xy``)."""
    ax, ay = getattr(a, "xy", a)
    bx, by = getattr(b, "xy", b)
    return math.hypot(ax - bx, ay - by)


def trajectory_csv(rows) -> str:
    """CSV text from ``(time, vid, x, y, speed)`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "vehicle", "x", "y", "speed"])
    for t, vid, x, y, s in rows:
        w.writerow([f"{t:.1f}", vid, f"{x:.3f}", f"{y:.3f}", f"{s:.3f}"])
    return buf.getvalue()
