"""Per-vehicle sensing-based semi-persistent scheduling.

Both the standard procedure and the enhanced variant share one pipeline:

1. build the candidate pool of the selection window,
2. drop subframes a hidden (half-duplex) neighbour may have reserved,
3. drop candidates colliding with decoded reservations whose RSRP exceeds the
   threshold, raising the threshold 3 dB at a time until at least 20 % of the
   pool survives,
4. rank survivors by A-RSSI and pick uniformly among the lowest 20 %.

They differ in how reservations are projected forward (fixed period versus
the CO chain), where the counter of a neighbour comes from (an estimate versus
the SCI field) and in the A-RSSI contribution set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import CYCLE, PoolConfig, SsrCoord, chain_offset, co_map, co_map_index, from_abs, orbit_table
from .sensing import (
    ENHANCED_MODE,
    MODES,
    STANDARD_MODE,
    ReservationTable,
    SensingDb,
    a_rssi_enhanced_many,
    a_rssi_standard_many,
    standard_rc_estimate,
)

log = logging.getLogger(__name__)
trace_log = logging.getLogger("cv2xsim.trace")

MAX_ITERATIONS = 20
KEEP = "keep"
RESELECT = "reselect"


class SchedulerError(RuntimeError):
    """Selection loop failed to reach the 20 % survivor bound."""


@dataclass
class SchedulerState:
    mode: str
    rc: int = 0
    hop: int = 0
    anchor: Optional[SsrCoord] = None
    anchor_time: Optional[int] = None
    p_th: float = -110.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class CandidatePool:
    times: np.ndarray
    subchannels: np.ndarray
    m_total: int

    def __len__(self):
        return len(self.times)

    @property
    def coords(self) -> list[SsrCoord]:
        return [from_abs(int(t), int(z)) for t, z in zip(self.times, self.subchannels)]

    def keys(self) -> set[tuple[int, int]]:
        return set(zip(self.times.tolist(), self.subchannels.tolist()))

    def subset(self, mask) -> "CandidatePool":
        mask = np.asarray(mask, dtype=bool)
        return CandidatePool(self.times[mask], self.subchannels[mask], self.m_total)


def survivors_needed(m_total: int) -> int:
    """Smallest integer count that is >= 0.2 * m_total."""
    return -(-m_total // 5)


def enough(count: int, m_total: int) -> bool:
    return 5 * count >= m_total


# ---------------------------------------------------------------------------
# candidate pool and exclusions
# ---------------------------------------------------------------------------

def candidate_pool(now: int, cfg: PoolConfig) -> CandidatePool:
    sub = np.arange(now + cfg.t1, now + cfg.t2 + 1, dtype=np.int64)
    times = np.repeat(sub, cfg.sc)
    subchannels = np.tile(np.arange(cfg.sc, dtype=np.int64), len(sub))
    return CandidatePool(times, subchannels, len(times))


def unmonitored_hops(rt: int) -> int:
    """Forward CO hops assumed for a neighbour whose SCI could not be heard."""
    return standard_rc_estimate(rt)


def unmonitored_keep(pool: CandidatePool, db: SensingDb, mode: str, cfg: PoolConfig, now: int) -> np.ndarray:
    """Boolean mask of candidates that survive the half-duplex exclusion."""
    times, present, monitored, _ = db.window(now)
    blind = times[present & ~monitored]
    if len(blind) == 0 or len(pool) == 0:
        return np.ones(len(pool), dtype=bool)
    if mode == STANDARD_MODE:
        return ~np.isin(pool.times % 100, np.unique(blind % 100))
    if mode != ENHANCED_MODE:
        raise ValueError(f"unknown mode {mode!r}")
    idx = blind % CYCLE
    hops = np.arange(1, unmonitored_hops(cfg.rt) + 1)
    images = [
        co_map_index(idx[:, None], z, hops[None, :], cfg.rt).ravel()
        for z in range(cfg.sc)
    ]
    return ~np.isin(pool.times % CYCLE, np.unique(np.concatenate(images)))


def exclude_unmonitored(pool: CandidatePool, db: SensingDb, mode: str, cfg: PoolConfig, now: int) -> CandidatePool:
    return pool.subset(unmonitored_keep(pool, db, mode, cfg, now))


def _as_table(reservations) -> ReservationTable:
    if isinstance(reservations, ReservationTable):
        return reservations
    return ReservationTable.from_list(reservations)


def _standard_levels(pool: CandidatePool, table: ReservationTable, sc: int) -> np.ndarray:
    levels = np.full(len(pool), -np.inf)
    if len(table) == 0 or len(pool) == 0:
        return levels
    lookup = np.full(CYCLE * sc, -1, dtype=np.int64)
    lookup[(pool.times % CYCLE) * sc + pool.subchannels] = np.arange(len(pool))
    k = np.arange(1, int(table.rc.max()) + 1)
    proj = (table.index[:, None] + k[None, :] * table.rri[:, None]) % CYCLE
    hit = lookup[proj * sc + table.subchannel[:, None]]
    hit[k[None, :] > table.rc[:, None]] = -1
    rows, cols = np.nonzero(hit >= 0)
    np.maximum.at(levels, hit[rows, cols], table.rsrp[rows])
    return levels


def _chains_intersect_explicit(index, z, rc, other_index, other_z, other_rc, rt, other_rt):
    if z != other_z:
        return False
    mine = {int(co_map_index(index, z, i, rt)) for i in range(rc)}
    if other_rt == 0:
        # no reservation period signalled: only the observed SSR itself
        return int(other_index) in mine
    return any(int(co_map_index(other_index, other_z, i, other_rt)) in mine for i in range(other_rc))


def _enhanced_levels(pool: CandidatePool, table: ReservationTable, rc: int, rt: int, sc: int) -> np.ndarray:
    """Max RSRP over reservations whose CO chain meets each candidate's chain.

    Chains are arcs on the orbits of the one-hop CO map, so two chains meet
    iff they share an orbit and one arc contains the start of the other.
    """
    levels = np.full(len(pool), -np.inf)
    if len(table) == 0 or len(pool) == 0:
        return levels
    cidx = pool.times % CYCLE
    same_rt = table.rri == rt
    for z in range(sc):
        cm = np.flatnonzero(pool.subchannels == z)
        em = np.flatnonzero((table.subchannel == z) & same_rt)
        if len(cm) == 0 or len(em) == 0:
            continue
        orbit, pos, length = orbit_table(rt, z)
        p = pos[cidx[cm]]
        q = pos[table.index[em]]
        same = orbit[cidx[cm]][:, None] == orbit[table.index[em]][None, :]
        fwd = (q[None, :] - p[:, None]) % length < rc
        back = (p[:, None] - q[None, :]) % length < table.rc[em][None, :]
        hit = same & (fwd | back)
        vals = np.where(hit, table.rsrp[em][None, :], -np.inf)
        levels[cm] = np.maximum(levels[cm], vals.max(axis=1))
    # reservations announced with a different period: enumerate both chains
    for e in np.flatnonzero(~same_rt):
        for c in range(len(pool)):
            if _chains_intersect_explicit(
                cidx[c], pool.subchannels[c], rc,
                table.index[e], table.subchannel[e], table.rc[e], rt, int(table.rri[e]),
            ):
                levels[c] = max(levels[c], table.rsrp[e])
    return levels


def interference_levels(pool: CandidatePool, reservations, mode: str, rc: int, cfg: PoolConfig) -> np.ndarray:
    """Per candidate, the highest RSRP among reservations that would collide.

    A candidate is excluded at threshold ``p_th`` iff its level exceeds ``p_th``;
    ``-inf`` means no reservation conflicts with it.
    """
    table = _as_table(reservations)
    if mode == STANDARD_MODE:
        return _standard_levels(pool, table, cfg.sc)
    if mode == ENHANCED_MODE:
        if rc < 1:
            raise ValueError("own rc must be drawn before exclusion")
        return _enhanced_levels(pool, table, rc, cfg.rt, cfg.sc)
    raise ValueError(f"unknown mode {mode!r}")


def exclude_reserved(pool: CandidatePool, reservations, state: SchedulerState, cfg: PoolConfig) -> CandidatePool:
    levels = interference_levels(pool, reservations, state.mode, state.rc, cfg)
    return pool.subset(levels <= state.p_th)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

@dataclass
class Selection:
    now: int
    mode: str
    rc: int
    m_total: int
    iterations: int
    p_th: float
    unmonitored_excluded: int
    unmonitored_relaxed: bool
    survivors: CandidatePool
    a_rssi: np.ndarray
    s_b: CandidatePool
    pick_time: int
    pick: SsrCoord
    extra: dict = field(default_factory=dict)

    def record(self) -> dict:
        return {
            "now": self.now,
            "mode": self.mode,
            "rc": self.rc,
            "m_total": self.m_total,
            "iterations": self.iterations,
            "p_th": self.p_th,
            "unmonitored_excluded": self.unmonitored_excluded,
            "unmonitored_relaxed": self.unmonitored_relaxed,
            "survivors": len(self.survivors),
            "s_b": [[int(t), int(z)] for t, z in zip(self.s_b.times, self.s_b.subchannels)],
            "pick": [self.pick_time, self.pick.subchannel],
            **self.extra,
        }


def surviving_candidates(db: SensingDb, state: SchedulerState, cfg: PoolConfig, now: int):
    """Run the exclusion loop. Returns ``(pool, survivors_mask, p_th, iterations, info)``."""
    pool = candidate_pool(now, cfg)
    m_total = pool.m_total
    keep_u = unmonitored_keep(pool, db, state.mode, cfg, now)
    excluded_u = int((~keep_u).sum())
    relaxed = False
    if not enough(int(keep_u.sum()), m_total):
        # hidden-terminal exclusion alone would empty the pool; ignore it
        keep_u = np.ones(len(pool), dtype=bool)
        relaxed = True
    table = db.reservation_table(state.mode, cfg.rt, now)
    levels = interference_levels(pool, table, state.mode, state.rc, cfg)
    p_th = cfg.p_th_init
    for iteration in range(1, MAX_ITERATIONS + 1):
        alive = keep_u & (levels <= p_th)
        if enough(int(alive.sum()), m_total):
            break
        p_th += 3.0
    else:
        raise SchedulerError(
            f"selection at t={now} kept {int(alive.sum())}/{m_total} candidates "
            f"after {MAX_ITERATIONS} threshold steps"
        )
    info = {"unmonitored_excluded": excluded_u, "unmonitored_relaxed": relaxed, "reservations": len(table)}
    return pool, alive, p_th, iteration, info


def a_rssi_for(db: SensingDb, pool: CandidatePool, mode: str, cfg: PoolConfig, now: int) -> np.ndarray:
    if mode == STANDARD_MODE:
        return a_rssi_standard_many(db, pool.times, pool.subchannels, now)
    return a_rssi_enhanced_many(db, pool.times, pool.subchannels, cfg.rt, now)


def selection(db: SensingDb, state: SchedulerState, cfg: PoolConfig, now: int, rng,
              tag: Optional[dict] = None) -> Selection:
    if state.rc < 1:
        raise ValueError("draw rc before selecting")
    state.p_th = cfg.p_th_init
    pool, alive, p_th, iterations, info = surviving_candidates(db, state, cfg, now)
    state.p_th = p_th
    survivors = pool.subset(alive)
    arssi = a_rssi_for(db, survivors, state.mode, cfg, now)
    order = np.lexsort((survivors.subchannels, survivors.times, arssi))
    k = survivors_needed(pool.m_total)
    chosen = order[:k]
    s_b = CandidatePool(survivors.times[chosen], survivors.subchannels[chosen], pool.m_total)
    j = int(rng.integers(len(s_b)))
    t, z = int(s_b.times[j]), int(s_b.subchannels[j])
    sel = Selection(
        now=now,
        mode=state.mode,
        rc=state.rc,
        m_total=pool.m_total,
        iterations=iterations,
        p_th=p_th,
        unmonitored_excluded=info["unmonitored_excluded"],
        unmonitored_relaxed=info["unmonitored_relaxed"],
        survivors=survivors,
        a_rssi=arssi[order],
        s_b=s_b,
        pick_time=t,
        pick=from_abs(t, z),
        extra={**(tag or {}), "reservations": info["reservations"]},
    )
    if trace_log.isEnabledFor(logging.DEBUG):
        trace_log.debug(json.dumps(sel.record()))
    return sel


def select(db: SensingDb, state: SchedulerState, cfg: PoolConfig, now: int, rng) -> SsrCoord:
    """Pick a new SSR and anchor the state's reservation on it."""
    sel = selection(db, state, cfg, now, rng)
    state.anchor = sel.pick
    state.anchor_time = sel.pick_time
    state.hop = 0
    return sel.pick


# ---------------------------------------------------------------------------
# reservation lifecycle
# ---------------------------------------------------------------------------

def draw_rc(cfg: PoolConfig, rng) -> int:
    return int(rng.integers(cfg.rc_min, cfg.rc_max + 1))


def on_rc_zero(state: SchedulerState, cfg: PoolConfig, rng) -> tuple[str, int]:
    if state.rc != 0:
        raise ValueError("on_rc_zero called with rc > 0")
    state.rc = draw_rc(cfg, rng)
    keep = rng.random() < cfg.beta and state.anchor is not None
    return (KEEP if keep else RESELECT), state.rc


def upcoming(state: SchedulerState, rt: int) -> tuple[SsrCoord, int]:
    """Next reserved SSR and its absolute subframe, without consuming it."""
    a = state.anchor
    if a is None or state.anchor_time is None:
        raise ValueError("no active reservation")
    index = a.frame * 10 + a.subframe
    if state.mode == STANDARD_MODE:
        offset = state.hop * rt
        coord = from_abs(index + offset, a.subchannel)
    else:
        coord = co_map(a, state.hop, rt)
        offset = chain_offset(index, a.subchannel, state.hop, rt)
    return coord, state.anchor_time + offset


def next_transmission(state: SchedulerState, rt: int) -> SsrCoord:
    if state.rc <= 0:
        raise ValueError("rc is 0: run on_rc_zero first")
    coord, _ = upcoming(state, rt)
    state.hop += 1
    state.rc -= 1
    return coord
