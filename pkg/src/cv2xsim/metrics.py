"""PDR and system-AoI accounting.

PDR(d) counts every (transmission, receiver) pair with the receiver within
``d`` metres of the sender; AoIS(th, d) counts, at each 100 ms check, the
ordered vehicle pairs within ``d`` whose freshest received update is older
than ``th`` subframes. Pairs that never exchanged a packet count as stale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

NEVER = -1


class AoiTable:
    """Generation time of the freshest packet each receiver holds from each sender.

    ``gen[receiver, sender]`` is :data:`NEVER` before the first reception.
    """

    def __init__(self, n: int):
        self.gen = np.full((n, n), NEVER, dtype=np.int64)

    def get(self, receiver: int, sender: int) -> Optional[int]:
        g = int(self.gen[receiver, sender])
        return None if g == NEVER else g

    def age(self, now: int) -> np.ndarray:
        """AoI matrix in subframes; ``inf`` where nothing was received."""
        age = (now - self.gen).astype(float)
        age[self.gen == NEVER] = np.inf
        return age


def update_aoi(table: AoiTable, receiver, sender: int, generation_ts: int) -> AoiTable:
    """Store ``generation_ts`` for the given receivers unless they hold fresher data."""
    col = table.gen[:, sender]
    col[receiver] = np.maximum(col[receiver], generation_ts)
    return table


@dataclass
class MetricsAccumulator:
    d_list: tuple
    aoi_th_list: tuple
    pdr_success: np.ndarray = field(init=False)
    pdr_total: np.ndarray = field(init=False)
    aois_exceed: np.ndarray = field(init=False)
    aois_checks: np.ndarray = field(init=False)

    def __post_init__(self):
        self.d_list = tuple(float(d) for d in self.d_list)
        self.aoi_th_list = tuple(int(t) for t in self.aoi_th_list)
        nd, nt = len(self.d_list), len(self.aoi_th_list)
        self.pdr_success = np.zeros(nd, dtype=np.int64)
        self.pdr_total = np.zeros(nd, dtype=np.int64)
        self.aois_exceed = np.zeros((nd, nt), dtype=np.int64)
        self.aois_checks = np.zeros((nd, nt), dtype=np.int64)

    def copy(self) -> "MetricsAccumulator":
        acc = MetricsAccumulator(self.d_list, self.aoi_th_list)
        for name in ("pdr_success", "pdr_total", "aois_exceed", "aois_checks"):
            getattr(acc, name)[...] = getattr(self, name)
        return acc


def record_transmission(acc: MetricsAccumulator, sender: int, distances, decoded) -> MetricsAccumulator:
    """Count one transmission.

    ``distances`` and ``decoded`` are aligned per-receiver arrays (the sender
    itself must not be included).
    """
    dist = np.asarray(distances, dtype=float)
    ok = np.asarray(decoded, dtype=bool)
    within = dist[None, :] <= np.asarray(acc.d_list)[:, None]
    acc.pdr_total += within.sum(axis=1)
    acc.pdr_success += (within & ok[None, :]).sum(axis=1)
    return acc


def aoi_check(acc: MetricsAccumulator, table: AoiTable, distances, now: int) -> MetricsAccumulator:
    """One freshness check by every vehicle; ``distances`` is the ``(n, n)`` matrix."""
    dist = np.asarray(distances, dtype=float)
    n = dist.shape[0]
    off_diag = ~np.eye(n, dtype=bool)
    age = table.age(now)
    th = np.asarray(acc.aoi_th_list, dtype=float)
    for k, d in enumerate(acc.d_list):
        pairs = off_diag & (dist <= d)
        ages = age[pairs]
        acc.aois_checks[k] += len(ages)
        acc.aois_exceed[k] += (ages[:, None] > th[None, :]).sum(axis=0)
    return acc


@dataclass(frozen=True)
class MetricsReport:
    d_list: tuple
    aoi_th_list: tuple
    pdr: dict  # d -> percent or None
    aois: dict  # (d, th) -> percent or None
    pdr_total: dict
    aois_checks: dict


def report(acc: MetricsAccumulator) -> MetricsReport:
    pdr, aois, totals, checks = {}, {}, {}, {}
    for k, d in enumerate(acc.d_list):
        tot = int(acc.pdr_total[k])
        totals[d] = tot
        pdr[d] = 100.0 * int(acc.pdr_success[k]) / tot if tot else None
        for j, th in enumerate(acc.aoi_th_list):
            c = int(acc.aois_checks[k, j])
            checks[(d, th)] = c
            aois[(d, th)] = 100.0 * int(acc.aois_exceed[k, j]) / c if c else None
    return MetricsReport(acc.d_list, acc.aoi_th_list, pdr, aois, totals, checks)
