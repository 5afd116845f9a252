"""Abstracted sidelink PHY: path loss, noise, SINR and threshold decoding.

Interference is counted only between transmissions that share both the
subframe and the subchannel. A vehicle that transmits in a subframe receives
nothing in it (half duplex).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SsrCoord


@dataclass
class LinkBudget:
    tx_power_dbm: float = 23.0
    fc_ghz: float = 5.9
    bandwidth_hz: float = 10e6
    noise_figure_db: float = 9.0
    sinr_threshold_tb_db: float = 5.0
    sinr_threshold_sci_db: float = 2.0
    rsrp_offset_db: float = 0.0
    shadowing: bool = False
    shadowing_sigma_db: float = 3.0

    def validate(self) -> None:
        from .core import ConfigError

        for name, value in vars(self).items():
            if isinstance(value, float) and not math.isfinite(value):
                raise ConfigError(f"link budget field {name} is not finite")
        if self.bandwidth_hz <= 0:
            raise ConfigError("bandwidth_hz must be positive")
        if self.fc_ghz <= 0:
            raise ConfigError("fc_ghz must be positive")
        if self.shadowing_sigma_db < 0:
            raise ConfigError("shadowing_sigma_db must be >= 0")

    @property
    def noise_bandwidth_hz(self) -> float:
        # occupied resource blocks: 50 RB x 180 kHz of a 10 MHz carrier (90 %)
        return 0.9 * self.bandwidth_hz

    @property
    def noise_dbm(self) -> float:
        return noise_power(self.noise_bandwidth_hz, self.noise_figure_db)


def path_loss(d, fc: float = 5.9):
    """WINNER+ B1 LOS path loss in dB; distances below 10 m clamp to 10 m."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0):
        raise ValueError("distance must be positive")
    pl = 22.7 * np.log10(np.maximum(d_arr, 10.0)) + 41.0 + 20.0 * math.log10(fc / 5.0)
    return float(pl) if pl.ndim == 0 else pl


def noise_power(bandwidth: float, nf: float) -> float:
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return -174.0 + 10.0 * math.log10(bandwidth) + nf


def dbm_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def mw_to_dbm(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=float))


def distance_matrix(positions) -> np.ndarray:
    p = np.asarray(positions, dtype=float)
    diff = p[:, None, :] - p[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def rx_power_matrix(positions, lb: LinkBudget, rng=None) -> np.ndarray:
    """Received power in dBm, indexed ``[transmitter, receiver]``.

    The diagonal is ``-inf``. With shadowing enabled, one symmetric log-normal
    draw per link is added.
    """
    dist = distance_matrix(positions)
    n = dist.shape[0]
    # clamp of path_loss already handles d < 10 m; avoid d == 0 rejections
    pl = path_loss(np.maximum(dist, 1e-9), lb.fc_ghz)
    prx = lb.tx_power_dbm - np.asarray(pl, dtype=float).reshape(n, n)
    if lb.shadowing and lb.shadowing_sigma_db > 0:
        if rng is None:
            raise ValueError("shadowing requires an rng")
        s = rng.normal(0.0, lb.shadowing_sigma_db, size=(n, n))
        s = np.triu(s, 1)
        prx = prx + s + s.T
    np.fill_diagonal(prx, -np.inf)
    return prx


@dataclass
class SubframeOutcome:
    """Outcome of one subframe.

    ``rssi_mw`` is ``(n, sc)`` with NaN rows for transmitting vehicles. The
    per-transmission arrays are ``(k, n)``, row ``j`` belonging to
    ``transmitters[j]``.
    """

    transmitters: np.ndarray
    subchannels: np.ndarray
    rssi_mw: np.ndarray
    sinr_db: np.ndarray
    decoded_sci: np.ndarray
    decoded_tb: np.ndarray
    rsrp_dbm: np.ndarray

    @property
    def rssi_dbm(self) -> np.ndarray:
        return mw_to_dbm(self.rssi_mw)

    def receives(self, receiver: int) -> bool:
        return receiver not in set(self.transmitters.tolist())


def resolve(tx, sub, prx_mw, noise_mw, sc, thr_sci_db, thr_tb_db, rsrp_offset_db=0.0, prx_dbm=None):
    """Core SINR resolution on a precomputed linear power matrix.

    ``tx`` and ``sub`` are equal-length integer arrays of transmitter ids and
    their subchannels; ``prx_mw[j, r]`` is the power vehicle ``r`` receives
    from ``j`` in mW. ``prx_dbm`` may carry the same matrix in dBm to save
    the logarithm.
    """
    tx = np.asarray(tx, dtype=np.int64)
    sub = np.asarray(sub, dtype=np.int64)
    k = len(tx)
    if len(set(tx.tolist())) != k:
        raise ValueError("duplicate transmitter in one subframe")
    sig = prx_mw[tx]  # (k, n)
    onehot = np.zeros((sc, k))
    onehot[sub, np.arange(k)] = 1.0
    total = onehot @ sig  # (sc, n) received power per subchannel
    interference = total[sub] - sig
    np.maximum(interference, 0.0, out=interference)
    with np.errstate(divide="ignore"):
        sinr_db = 10.0 * np.log10(sig / (interference + noise_mw))
        rsrp = (10.0 * np.log10(sig) if prx_dbm is None else prx_dbm[tx]) + rsrp_offset_db
    rssi = (total + noise_mw).T  # (n, sc) in mW
    sinr_db[:, tx] = -np.inf
    rssi[tx] = np.nan
    rsrp[:, tx] = np.nan
    return SubframeOutcome(
        transmitters=tx,
        subchannels=sub,
        rssi_mw=rssi,
        sinr_db=sinr_db,
        decoded_sci=sinr_db >= thr_sci_db,
        decoded_tb=sinr_db >= thr_tb_db,
        rsrp_dbm=rsrp,
    )


def resolve_subframe(transmissions, positions, lb: LinkBudget, sc: int = 3) -> SubframeOutcome:
    """Resolve one subframe from ``(vehicle, SsrCoord, packet)`` tuples."""
    tx = [t[0] for t in transmissions]
    sub = []
    for t in transmissions:
        c = t[1]
        z = c.subchannel if isinstance(c, SsrCoord) else int(c)
        if not 0 <= z < sc:
            raise ValueError(f"subchannel {z} outside [0, {sc - 1}]")
        sub.append(z)
    prx_mw = dbm_to_mw(rx_power_matrix(positions, lb))
    return resolve(
        tx, sub, prx_mw, float(dbm_to_mw(lb.noise_dbm)), sc,
        lb.sinr_threshold_sci_db, lb.sinr_threshold_tb_db, lb.rsrp_offset_db,
    )
