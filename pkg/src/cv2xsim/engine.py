"""Deterministic subframe-by-subframe simulation of one scenario.

Timeline of a run (1 subframe = 1 ms):

* subframes ``0 .. 999`` are a listen-only warm-up that fills every sensing window;
* each vehicle generates a packet every ``rt`` subframes from a random phase
  in ``[0, rt)`` after the warm-up and selects its first SSR at that moment;
* mobility advances every 100 subframes and positions are held in between;
* metrics are collected from ``1000 + rt`` on, AoI being checked every 100 ms.

All randomness derives from the scenario seed through independent streams
(mobility, phases, PHY shadowing, one per vehicle scheduler).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import metrics as M
from .core import ConfigError, PoolConfig, from_abs
from .mobility import KraussParams, RoadNetwork, World, spawn, step_all
from .phy import LinkBudget, dbm_to_mw, distance_matrix, resolve, rx_power_matrix
from .sci import SciMessage, encode_sci
from .scheduler import (
    RESELECT,
    SchedulerError,
    SchedulerState,
    draw_rc,
    next_transmission,
    on_rc_zero,
    selection,
    upcoming,
)
from .sensing import MODES, SensingBank, sci_format

log = logging.getLogger(__name__)

WARMUP = 1000
CHECK_PERIOD = 100

STREAM_MOBILITY = 0
STREAM_PHASE = 1
STREAM_PHY = 2
STREAM_SCHEDULER = 3


@dataclass
class MobilityConfig:
    rows: int = 5
    cols: int = 5
    block: float = 250.0
    accel: float = 2.6
    decel: float = 4.5
    v_max: float = 13.9
    tau: float = 1.0
    sigma: float = 0.5
    length: float = 5.0
    min_gap: float = 2.5

    def krauss(self) -> KraussParams:
        return KraussParams(self.accel, self.decel, self.v_max, self.tau, self.sigma, self.length, self.min_gap)

    def validate(self) -> None:
        if self.rows < 2 or self.cols < 2:
            raise ConfigError("mobility grid needs at least 2x2 intersections")
        for name in ("block", "accel", "decel", "v_max", "tau", "length"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"mobility.{name} must be positive")
        if not 0 <= self.sigma <= 1:
            raise ConfigError("mobility.sigma must lie in [0, 1]")
        if self.min_gap < 0:
            raise ConfigError("mobility.min_gap must be >= 0")


@dataclass
class ScenarioConfig:
    n_vehicles: int = 50
    mode: str = "enhanced"
    duration_s: float = 30.0
    seed: int = 0
    message_size: int = 190
    mcs: int = 7
    d_list: tuple = (100.0, 200.0, 300.0, 400.0, 500.0)
    aoi_th_list: tuple = (50, 100, 150, 200)
    pool: PoolConfig = field(default_factory=PoolConfig)
    link: LinkBudget = field(default_factory=LinkBudget)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_vehicles < 1:
            raise ConfigError("n_vehicles must be >= 1")
        self.pool.validate()
        self.link.validate()
        self.mobility.validate()
        if self.subframes < WARMUP:
            raise ConfigError(
                f"duration {self.duration_s} s is shorter than the {WARMUP / 1000} s warm-up"
            )
        for name in ("d_list", "aoi_th_list"):
            values = list(getattr(self, name))
            if not values:
                raise ConfigError(f"{name} must not be empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigError(f"{name} must be strictly ascending")
            if values[0] <= 0:
                raise ConfigError(f"{name} values must be positive")
        if not 0 <= self.mcs < 32:
            raise ConfigError("mcs must fit 5 bits")
        if self.message_size <= 0:
            raise ConfigError("message_size must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def subframes(self) -> int:
        return int(round(self.duration_s * 1000))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class RunReport:
    config: ScenarioConfig
    metrics: Optional[M.MetricsReport]
    diagnostics: dict
    config_hash: str
    wall_clock_s: float = 0.0
    error: Optional[str] = None

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def run_id(self) -> str:
        c = self.config
        return f"{c.mode}-n{c.n_vehicles}-s{c.seed}-{self.config_hash}"

    @property
    def ok(self) -> bool:
        return self.error is None


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@lru_cache(maxsize=4096)
def _sci_word(rri_code: int, frl: int, mcs: int, rc: int, sc: int, fmt: str) -> int:
    if fmt == "proposed":
        msg = SciMessage(rri_code, frl, mcs, 0, rc=rc)
    else:
        msg = SciMessage(rri_code, frl, mcs, 0, opaque=0)
    return encode_sci(msg, sc, fmt)


class Simulation:
    """Mutable state of one run; :func:`run` drives it to completion."""

    def __init__(self, cfg: ScenarioConfig, trace: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.trace = trace
        self.trace_records: list[dict] = []
        n, pool = cfg.n_vehicles, cfg.pool
        self.n = n
        self.rt = pool.rt
        self.metrics_start = WARMUP + pool.rt
        self.fmt = sci_format(cfg.mode)

        self.rng_mobility = _stream(cfg.seed, STREAM_MOBILITY)
        self.rng_phy = _stream(cfg.seed, STREAM_PHY)
        self.rng_sched = [_stream(cfg.seed, STREAM_SCHEDULER, v) for v in range(n)]
        phase = _stream(cfg.seed, STREAM_PHASE).integers(0, pool.rt, size=n)
        self.phase = phase
        self.gen_by_phase = [np.flatnonzero(phase == r).tolist() for r in range(pool.rt)]

        net = RoadNetwork(cfg.mobility.rows, cfg.mobility.cols, cfg.mobility.block)
        self.world: World = spawn(net, n, self.rng_mobility, cfg.mobility.krauss())
        self.bank = SensingBank(n, pool.sc)
        self.states = [SchedulerState(cfg.mode, p_th=pool.p_th_init) for _ in range(n)]
        self.needs_selection = np.ones(n, dtype=bool)
        self.last_gen = np.full(n, -1, dtype=np.int64)
        self.last_sent = np.full(n, -1, dtype=np.int64)
        self.schedule: dict[int, list[int]] = {}
        self.aoi = M.AoiTable(n)
        self.acc = M.MetricsAccumulator(cfg.d_list, cfg.aoi_th_list)
        self.noise_mw = float(dbm_to_mw(cfg.link.noise_dbm))
        self.t = 0
        self.diag = {
            "transmissions": 0,
            "selections": 0,
            "keeps": 0,
            "repeated_packets": 0,
            "generated_packets": 0,
            "sent_packets": 0,
            "unmonitored_relaxed": 0,
            "threshold_steps": 0,
            "mobility_overlaps": 0,
        }
        self._refresh_links()

    # ------------------------------------------------------------------ links
    def _refresh_links(self) -> None:
        pos = self.world.positions()
        self.positions = pos
        self.dist = distance_matrix(pos)
        self.prx_dbm = rx_power_matrix(pos, self.cfg.link, self.rng_phy)
        self.prx_mw = dbm_to_mw(self.prx_dbm)
        off = ~np.eye(self.n, dtype=bool)
        d = np.asarray(self.acc.d_list)
        self.within = (self.dist[None, :, :] <= d[:, None, None]) & off[None, :, :]

    # ------------------------------------------------------------- scheduling
    def _schedule_next(self, v: int, not_before: int) -> None:
        st = self.states[v]
        coord, t_next = upcoming(st, self.rt)
        while t_next < not_before:
            # kept reservation whose next SSR already passed
            st.hop += 1
            coord, t_next = upcoming(st, self.rt)
        self.schedule.setdefault(t_next, []).append(v)

    def _reselect(self, v: int, t: int) -> None:
        st, rng = self.states[v], self.rng_sched[v]
        if st.anchor is None:
            st.rc = draw_rc(self.cfg.pool, rng)
            decision = RESELECT
        else:
            decision, _ = on_rc_zero(st, self.cfg.pool, rng)
        if decision == RESELECT:
            sel = selection(self.bank.db(v), st, self.cfg.pool, t, rng, tag={"vehicle": v})
            st.anchor, st.anchor_time, st.hop = sel.pick, sel.pick_time, 0
            self.diag["selections"] += 1
            self.diag["threshold_steps"] += sel.iterations - 1
            self.diag["unmonitored_relaxed"] += int(sel.unmonitored_relaxed)
            if self.trace:
                self.trace_records.append({"vehicle": v, **sel.record()})
        else:
            self.diag["keeps"] += 1
        self.needs_selection[v] = False
        self._schedule_next(v, t)

    # ---------------------------------------------------------------- subframe
    def _transmit(self, t: int, vehicles: list[int]) -> None:
        pool = self.cfg.pool
        tx = np.array(sorted(vehicles), dtype=np.int64)
        subs = np.empty(len(tx), dtype=np.int64)
        words = np.empty(len(tx), dtype=np.int64)
        gens = np.empty(len(tx), dtype=np.int64)
        for j, v in enumerate(tx.tolist()):
            st = self.states[v]
            rc_before = st.rc
            coord = next_transmission(st, self.rt)
            subs[j] = coord.subchannel
            words[j] = _sci_word(self.rt // 10, coord.subchannel, self.cfg.mcs, rc_before, pool.sc, self.fmt)
            g = self.last_gen[v]
            gens[j] = g
            if g == self.last_sent[v]:
                self.diag["repeated_packets"] += 1
            else:
                self.diag["sent_packets"] += 1
            self.last_sent[v] = g

        lb = self.cfg.link
        out = resolve(tx, subs, self.prx_mw, self.noise_mw, pool.sc,
                      lb.sinr_threshold_sci_db, lb.sinr_threshold_tb_db, lb.rsrp_offset_db, self.prx_dbm)
        busy = np.zeros(self.n, dtype=bool)
        busy[tx] = True
        self.bank.record(t, busy, out.rssi_mw)
        rsrp = np.where(out.decoded_sci, out.rsrp_dbm, np.nan)
        self.bank.log.append(t, subs, words, rsrp)

        tb = out.decoded_tb
        cols = self.aoi.gen[:, tx]
        self.aoi.gen[:, tx] = np.where(tb.T, np.maximum(cols, gens[None, :]), cols)

        if t >= self.metrics_start:
            within = self.within[:, tx, :]
            self.acc.pdr_total += within.sum(axis=(1, 2))
            self.acc.pdr_success += (within & tb[None, :, :]).sum(axis=(1, 2))

        self.diag["transmissions"] += len(tx)
        for v in tx.tolist():
            if self.states[v].rc == 0:
                self.needs_selection[v] = True
            else:
                self._schedule_next(v, t + 1)

    def step(self) -> None:
        t = self.t
        if t >= WARMUP:
            for v in self.gen_by_phase[t % self.rt]:
                self.last_gen[v] = t
                self.diag["generated_packets"] += 1
                if self.needs_selection[v]:
                    self._reselect(v, t)
        vehicles = self.schedule.pop(t, None)
        if vehicles:
            self._transmit(t, vehicles)
        else:
            self.bank.record_idle(t, self.noise_mw)
        self.t = t + 1
        if self.t % CHECK_PERIOD == 0:
            step_all(self.world, CHECK_PERIOD / 1000.0, self.rng_mobility)
            self._refresh_links()
            if self.t >= self.metrics_start:
                M.aoi_check(self.acc, self.aoi, self.dist, self.t)

    def force_reservation(self, v: int, t_anchor: int, subchannel: int, rc: int) -> None:
        """Install a reservation for ``v`` starting at absolute subframe ``t_anchor``.

        Bypasses selection; used to stage collisions in experiments and tests.
        """
        if t_anchor < self.t:
            raise ValueError("anchor lies in the past")
        if not 0 <= subchannel < self.cfg.pool.sc:
            raise ValueError("subchannel outside the pool")
        if rc < 1:
            raise ValueError("rc must be >= 1")
        for waiting in self.schedule.values():
            if v in waiting:
                waiting.remove(v)
        st = self.states[v]
        st.rc, st.hop = rc, 0
        st.anchor, st.anchor_time = from_abs(t_anchor, subchannel), t_anchor
        self.needs_selection[v] = False
        self.schedule.setdefault(t_anchor, []).append(v)

    def run_until(self, t_end: int) -> None:
        while self.t < t_end:
            self.step()

    def finish(self) -> dict:
        d = dict(self.diag)
        d["dropped_packets"] = d["generated_packets"] - d["sent_packets"] - int(
            np.sum(self.last_gen > self.last_sent)
        )
        d["mobility_overlaps"] = self.world.overlap_events
        d["mobility_yields"] = self.world.yield_events
        d["turn_events"] = len(self.world.turns)
        return d


def run(cfg: ScenarioConfig, trace: bool = False) -> RunReport:
    start = time.perf_counter()
    sim = Simulation(cfg, trace=trace)
    sim.run_until(cfg.subframes)
    report = RunReport(
        config=cfg,
        metrics=M.report(sim.acc),
        diagnostics=sim.finish(),
        config_hash=cfg.config_hash(),
        wall_clock_s=time.perf_counter() - start,
    )
    if trace:
        report.diagnostics["trace"] = sim.trace_records
    return report


def _run_safe(cfg: ScenarioConfig) -> RunReport:
    try:
        return run(cfg)
    except (SchedulerError, ConfigError, ValueError, RuntimeError) as exc:
        where = f"n={cfg.n_vehicles} mode={cfg.mode} seed={cfg.seed}"
        return RunReport(cfg, None, {}, cfg.config_hash(), error=f"{where}: {exc}")


def sweep_configs(base: ScenarioConfig, seeds, modes, n_list) -> list[ScenarioConfig]:
    if not seeds or not modes or not n_list:
        raise ConfigError("sweep lists must be non-empty")
    return [
        base.replace(n_vehicles=int(n), mode=m, seed=int(s))
        for n in n_list
        for m in modes
        for s in seeds
    ]


def run_sweep(base: ScenarioConfig, seeds, modes, n_list, jobs: int = 1) -> list[RunReport]:
    """Cartesian product of runs; failed runs come back with ``error`` set."""
    configs = sweep_configs(base, seeds, modes, n_list)
    for c in configs:
        c.validate()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            reports = list(ex.map(_run_safe, configs))
    else:
        reports = [_run_safe(c) for c in configs]
    for r in reports:
        if r.error:
            log.error("run failed: %s", r.error)
    return sorted(reports, key=lambda r: (r.config.n_vehicles, r.config.mode, r.config.seed))


CSV_HEADER = ("run_id", "seed", "n_vehicles", "mode", "d", "aoi_th", "pdr_pct", "aois_pct")


def _num(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.6f}"


def csv_rows(report: RunReport) -> list[list[str]]:
    """One row per ``(d, aoi_th)`` cell; absent metrics are empty strings."""
    if report.metrics is None:
        return []
    m, c = report.metrics, report.config
    rows = []
    for d in m.d_list:
        for th in m.aoi_th_list:
            rows.append([report.run_id, str(c.seed), str(c.n_vehicles), c.mode,
                         f"{d:g}", str(th), _num(m.pdr[d]), _num(m.aois[(d, th)])])
    return rows


def reports_to_csv(reports) -> str:
    """Deterministic CSV text (no wall-clock) for a list of reports."""
    ordered = sorted(reports, key=lambda r: (r.config.n_vehicles, r.config.mode, r.config.seed, r.run_id))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in ordered:
        w.writerows(csv_rows(r))
    return buf.getvalue()
