"""Per-vehicle sensing database over the trailing 1000-subframe window.

Measurements are stored in a ring keyed by absolute subframe (slot ``t % 1000``).
Decoded SCIs live in a :class:`DecodedLog`; one log can be shared by all
vehicles of a run with one RSRP column per receiver, which lets the engine
record a whole subframe with a handful of array operations. A standalone
:class:`SensingDb` owns a private single-column log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .core import CYCLE, SsrCoord, from_abs
from .sci import PROPOSED, STANDARD, SciMessage, decode_fields, decode_sci, encode_sci

WINDOW = 1000
RSSI_FLOOR_DBM = -120.0

STANDARD_MODE = "standard"
ENHANCED_MODE = "enhanced"
MODES = (STANDARD_MODE, ENHANCED_MODE)


def sci_format(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    return PROPOSED if mode == ENHANCED_MODE else STANDARD


def standard_rc_estimate(rt: int) -> int:
    return math.ceil(100 / rt)


@dataclass(frozen=True)
class DecodedReservation:
    coord: SsrCoord
    rsrp: float
    rri: int
    rc: int
    time: Optional[int] = None


@dataclass
class ReservationTable:
    """Column form of a list of :class:`DecodedReservation`."""

    index: np.ndarray  # frame*10 + subframe
    subchannel: np.ndarray
    rsrp: np.ndarray
    rri: np.ndarray
    rc: np.ndarray
    time: np.ndarray

    def __len__(self):
        return len(self.index)

    @classmethod
    def from_list(cls, reservations: Iterable[DecodedReservation]) -> "ReservationTable":
        res = list(reservations)
        return cls(
            index=np.array([r.coord.frame * 10 + r.coord.subframe for r in res], dtype=np.int64),
            subchannel=np.array([r.coord.subchannel for r in res], dtype=np.int64),
            rsrp=np.array([r.rsrp for r in res], dtype=float),
            rri=np.array([r.rri for r in res], dtype=np.int64),
            rc=np.array([r.rc for r in res], dtype=np.int64),
            time=np.array([-1 if r.time is None else r.time for r in res], dtype=np.int64),
        )

    def to_list(self) -> list[DecodedReservation]:
        return [
            DecodedReservation(
                from_abs(int(i), int(z)), float(p), int(rri), int(rc), int(t)
            )
            for i, z, p, rri, rc, t in zip(
                self.index, self.subchannel, self.rsrp, self.rri, self.rc, self.time
            )
        ]


class DecodedLog:
    """Growable columnar log of transmissions with per-receiver RSRP.

    ``rsrp[row, receiver]`` is NaN when the receiver did not decode the SCI.
    Rows older than the sensing window are dropped on compaction.
    """

    def __init__(self, n_receivers: int, capacity: int = 1024):
        self.n_receivers = n_receivers
        self.size = 0
        self.time = np.zeros(capacity, dtype=np.int64)
        self.subchannel = np.zeros(capacity, dtype=np.int64)
        self.word = np.zeros(capacity, dtype=np.int64)
        self.rsrp = np.full((capacity, n_receivers), np.nan)

    def _reserve(self, extra: int) -> None:
        cap = len(self.time)
        if self.size + extra <= cap:
            return
        if self.size:
            latest = self.time[self.size - 1]
            keep = np.flatnonzero(self.time[: self.size] >= latest - WINDOW)
            m = len(keep)
            self.time[:m] = self.time[keep]
            self.subchannel[:m] = self.subchannel[keep]
            self.word[:m] = self.word[keep]
            self.rsrp[:m] = self.rsrp[keep]
            self.size = m
        if self.size + extra > cap // 2:
            new_cap = max(2 * cap, self.size + extra)
            for name in ("time", "subchannel", "word"):
                arr = getattr(self, name)
                grown = np.zeros(new_cap, dtype=arr.dtype)
                grown[: self.size] = arr[: self.size]
                setattr(self, name, grown)
            grown = np.full((new_cap, self.n_receivers), np.nan)
            grown[: self.size] = self.rsrp[: self.size]
            self.rsrp = grown

    def append(self, t: int, subchannels, words, rsrp) -> None:
        """Append ``k`` transmissions of subframe ``t``; ``rsrp`` is ``(k, n_receivers)``."""
        k = len(subchannels)
        if k == 0:
            return
        self._reserve(k)
        s = self.size
        self.time[s : s + k] = t
        self.subchannel[s : s + k] = subchannels
        self.word[s : s + k] = words
        self.rsrp[s : s + k] = rsrp
        self.size += k

    def rows_for(self, column: int, now: int) -> np.ndarray:
        """Row indices decoded by ``column`` inside the window before ``now``."""
        t = self.time[: self.size]
        lo = np.searchsorted(t, now - WINDOW, side="left")
        hi = np.searchsorted(t, now, side="left")
        rows = np.arange(lo, hi)
        return rows[~np.isnan(self.rsrp[lo:hi, column])]


class SensingDb:
    def __init__(self, sc: int, *, rssi_mw=None, monitored=None, stamp=None, log=None, column=0):
        self.sc = sc
        self.rssi_mw = np.full((WINDOW, sc), np.nan) if rssi_mw is None else rssi_mw
        self.monitored = np.ones(WINDOW, dtype=bool) if monitored is None else monitored
        self.stamp = np.full(WINDOW, -(10**9), dtype=np.int64) if stamp is None else stamp
        self.log = DecodedLog(1) if log is None else log
        self.column = column

    # ---------------------------------------------------------------- record
    def record_subframe(self, t: int, monitored: bool, rssi_dbm=None, decoded=()) -> None:
        """Store the measurements of subframe ``t`` (evicting ``t - 1000``).

        ``decoded`` holds ``(coord, sci, rsrp_dbm)`` triples where ``sci`` is a
        :class:`SciMessage` or an already encoded 32-bit word.
        """
        if not monitored and (rssi_dbm is not None or decoded):
            raise ValueError("an unmonitored subframe carries no observations")
        if self.log.size and t < self.log.time[self.log.size - 1]:
            raise ValueError("subframes must be recorded in time order")
        slot = t % WINDOW
        self.stamp[slot] = t
        self.monitored[slot] = monitored
        if monitored and rssi_dbm is not None:
            r = np.asarray(rssi_dbm, dtype=float)
            if r.shape != (self.sc,):
                raise ValueError(f"expected {self.sc} rssi values")
            self.rssi_mw[slot] = np.power(10.0, r / 10.0)
        else:
            self.rssi_mw[slot] = np.nan
        if decoded:
            subs, words, rsrp = [], [], []
            for coord, sci, p in decoded:
                if isinstance(sci, SciMessage):
                    fmt = STANDARD if sci.rc is None else PROPOSED
                    sci = encode_sci(sci, self.sc, fmt)
                subs.append(coord.subchannel)
                words.append(int(sci))
                row = np.full(self.log.n_receivers, np.nan)
                row[self.column] = p
                rsrp.append(row)
            self.log.append(t, subs, words, np.array(rsrp))

    # ---------------------------------------------------------------- query
    def window(self, now: int):
        """``(times, present, monitored, rssi_mw)`` for subframes ``now-1000 .. now-1``.

        ``present`` is False for slots that were never recorded for that time.
        """
        times = np.arange(now - WINDOW, now, dtype=np.int64)
        slots = times % WINDOW
        present = self.stamp[slots] == times
        return times, present, self.monitored[slots] | ~present, self.rssi_mw[slots]

    def rssi_dbm(self, t: int):
        slot = t % WINDOW
        if self.stamp[slot] != t:
            return None
        return 10.0 * np.log10(self.rssi_mw[slot])

    def reservation_table(self, mode: str, rt: int, now: int) -> ReservationTable:
        rows = self.log.rows_for(self.column, now)
        t = self.log.time[rows]
        f = decode_fields(self.log.word[rows], self.sc)
        if mode == ENHANCED_MODE:
            rc = np.maximum(f["tail"], 1)
        elif mode == STANDARD_MODE:
            rc = np.full(len(rows), standard_rc_estimate(rt), dtype=np.int64)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return ReservationTable(
            index=t % CYCLE,
            subchannel=self.log.subchannel[rows],
            rsrp=self.log.rsrp[rows, self.column],
            rri=f["rri_code"] * 10,
            rc=rc,
            time=t,
        )

    def decoded_reservations(self, mode: str, rt: int, now: int) -> list[DecodedReservation]:
        return self.reservation_table(mode, rt, now).to_list()

    def decoded_messages(self, now: int, mode: str) -> list[tuple[int, SciMessage]]:
        fmt = sci_format(mode)
        rows = self.log.rows_for(self.column, now)
        return [(int(self.log.time[r]), decode_sci(int(self.log.word[r]), self.sc, fmt)) for r in rows]

    def dump_csv(self, now: int, mode: str = ENHANCED_MODE) -> str:
        """Per-subframe text dump of the window for debugging."""
        times, present, monitored, rssi = self.window(now)
        by_time: dict[int, list[str]] = {}
        for t, msg in self.decoded_messages(now, mode):
            by_time.setdefault(t, []).append(f"z{msg.frl}:rc={msg.rc}")
        lines = ["index,monitored," + ",".join(f"rssi_{z}" for z in range(self.sc)) + ",decoded"]
        with np.errstate(divide="ignore", invalid="ignore"):
            dbm = 10.0 * np.log10(rssi)
        for t, p, m, row in zip(times, present, monitored, dbm):
            if not p:
                continue
            vals = ",".join("" if np.isnan(v) else f"{v:.2f}" for v in row)
            lines.append(f"{t},{int(m)},{vals},{' '.join(by_time.get(int(t), []))}")
        return "\n".join(lines) + "\n"


class SensingBank:
    """Sensing databases of all vehicles of one run, stored contiguously."""

    def __init__(self, n: int, sc: int):
        self.n = n
        self.sc = sc
        self.rssi_mw = np.full((n, WINDOW, sc), np.nan)
        self.monitored = np.ones((n, WINDOW), dtype=bool)
        self.stamp = np.full(WINDOW, -(10**9), dtype=np.int64)
        self.log = DecodedLog(n, capacity=max(1024, 64 * n))

    def db(self, v: int) -> SensingDb:
        return SensingDb(
            self.sc,
            rssi_mw=self.rssi_mw[v],
            monitored=self.monitored[v],
            stamp=self.stamp,
            log=self.log,
            column=v,
        )

    def record(self, t: int, busy, rssi_mw) -> None:
        """Record subframe ``t`` for every vehicle; ``rssi_mw`` is ``(n, sc)``."""
        slot = t % WINDOW
        self.stamp[slot] = t
        self.monitored[:, slot] = ~busy
        self.rssi_mw[:, slot, :] = rssi_mw

    def record_idle(self, t: int, noise_mw: float) -> None:
        slot = t % WINDOW
        self.stamp[slot] = t
        self.monitored[:, slot] = True
        self.rssi_mw[:, slot, :] = noise_mw


# ---------------------------------------------------------------------------
# A-RSSI
# ---------------------------------------------------------------------------

def _mean_dbm(values_mw: np.ndarray, valid: np.ndarray, floor: float) -> np.ndarray:
    cnt = valid.sum(axis=1)
    tot = np.where(valid, values_mw, 0.0).sum(axis=1)
    out = np.full(len(cnt), floor)
    ok = cnt > 0
    out[ok] = 10.0 * np.log10(tot[ok] / cnt[ok])
    return out


def _lookup(db: SensingDb, w: np.ndarray, z: np.ndarray, now: int):
    """RSSI (mW) and validity of window cells at times ``w`` on subchannels ``z``."""
    in_win = (w >= now - WINDOW) & (w < now)
    slots = w % WINDOW
    present = db.stamp[slots] == w
    vals = db.rssi_mw[slots, z]
    valid = in_win & present & db.monitored[slots] & ~np.isnan(vals)
    return vals, valid


def candidate_times(indices, now: int) -> np.ndarray:
    """Absolute times of selection-window coordinates (first occurrence after ``now``)."""
    return now + (np.asarray(indices) - now) % CYCLE


def a_rssi_standard_many(db, times, subchannels, now, floor=RSSI_FLOOR_DBM):
    times = np.asarray(times, dtype=np.int64)
    z = np.asarray(subchannels, dtype=np.int64)
    k_max = max(1, int((times.max(initial=now) - now + WINDOW) // 100))
    k = np.arange(1, k_max + 1)
    w = times[:, None] - 100 * k[None, :]
    vals, valid = _lookup(db, w, np.broadcast_to(z[:, None], w.shape), now)
    return _mean_dbm(vals, valid, floor)


def enhanced_hops(rt: int) -> int:
    return math.ceil(1100 / rt)


def a_rssi_enhanced_many(db, times, subchannels, rt, now, floor=RSSI_FLOOR_DBM):
    times = np.asarray(times, dtype=np.int64)
    z = np.asarray(subchannels, dtype=np.int64)
    idx = times % CYCLE
    step = rt // 10
    i = np.arange(1, enhanced_hops(rt) + 1)
    frame = (idx[:, None] // 10 - i[None, :] * step) % 1024
    sub = (idx[:, None] % 10 - i[None, :] * z[:, None]) % 10
    pre = frame * 10 + sub
    # unique window time carrying that coordinate, if any
    w = (now - 1) - ((now - 1 - pre) % CYCLE)
    vals, valid = _lookup(db, w, np.broadcast_to(z[:, None], w.shape), now)
    return _mean_dbm(vals, valid, floor)


def a_rssi_standard(db: SensingDb, candidate: SsrCoord, now: int, floor: float = RSSI_FLOOR_DBM) -> float:
    t = candidate_times([candidate.frame * 10 + candidate.subframe], now)
    return float(a_rssi_standard_many(db, t, [candidate.subchannel], now, floor)[0])


def a_rssi_enhanced(db: SensingDb, candidate: SsrCoord, rt: int, now: int, floor: float = RSSI_FLOOR_DBM) -> float:
    t = candidate_times([candidate.frame * 10 + candidate.subframe], now)
    return float(a_rssi_enhanced_many(db, t, [candidate.subchannel], rt, now, floor)[0])
