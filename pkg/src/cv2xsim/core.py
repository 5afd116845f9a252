"""Resource grid coordinates, SFN-cycle arithmetic and the CO reservation map.

A single subframe resource (SSR) is addressed by ``(frame, subframe,
subchannel)``. Frames wrap every 1024 (one SFN cycle = 10240 subframes), so
the engine keeps an unbounded absolute subframe counter and reduces it to a
coordinate with :func:`from_abs` whenever a grid position is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

FRAMES_PER_CYCLE = 1024
SUBFRAMES_PER_FRAME = 10
CYCLE = FRAMES_PER_CYCLE * SUBFRAMES_PER_FRAME  # 10240 subframes


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass(frozen=True, order=True)
class SsrCoord:
    frame: int
    subframe: int
    subchannel: int

    def __post_init__(self):
        if not 0 <= self.frame < FRAMES_PER_CYCLE:
            raise ValueError(f"frame {self.frame} outside [0, 1023]")
        if not 0 <= self.subframe < SUBFRAMES_PER_FRAME:
            raise ValueError(f"subframe {self.subframe} outside [0, 9]")
        if self.subchannel < 0:
            raise ValueError(f"negative subchannel {self.subchannel}")

    def __str__(self):
        return f"({self.frame},{self.subframe},{self.subchannel})"


@dataclass
class PoolConfig:
    sc: int = 3
    rt: int = 20
    t1: int = 4
    t2: int = 20
    rc_min: int = 25
    rc_max: int = 75
    beta: float = 0.0
    p_th_init: float = -110.0

    def validate(self) -> None:
        if self.sc < 1:
            raise ConfigError("sc must be >= 1")
        if self.rt <= 0 or self.rt % 10:
            raise ConfigError(f"rt={self.rt} must be a positive multiple of 10")
        if self.rt // 10 > 15:
            raise ConfigError("rt/10 must fit the 4-bit reservation field")
        if not 0 < self.t1 <= self.t2:
            raise ConfigError("need 0 < t1 <= t2")
        if not 1 <= self.rc_min <= self.rc_max <= 255:
            raise ConfigError("need 1 <= rc_min <= rc_max <= 255")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")

    @property
    def m_total(self) -> int:
        return (self.t2 - self.t1 + 1) * self.sc


def abs_index(c: SsrCoord) -> int:
    return c.frame * SUBFRAMES_PER_FRAME + c.subframe


def from_abs(index: int, subchannel: int = 0) -> SsrCoord:
    """Coordinate of an absolute subframe counter (reduced mod the SFN cycle)."""
    index %= CYCLE
    return SsrCoord(index // SUBFRAMES_PER_FRAME, index % SUBFRAMES_PER_FRAME, subchannel)


def _check_rt(rt: int) -> int:
    if rt <= 0 or rt % 10:
        raise ValueError(f"rt={rt} is not a positive multiple of 10")
    return rt // 10


def co_map(c: SsrCoord, i: int, rt: int) -> SsrCoord:
    """i-th reserved SSR of a chain anchored at ``c``.

    Frame and subframe are shifted independently, so a subframe that wraps past 9
    does not carry into the frame number.
    """
    step = _check_rt(rt)
    if i < 0:
        raise ValueError("hop index must be non-negative")
    z = c.subchannel
    return SsrCoord(
        (c.frame + i * step) % FRAMES_PER_CYCLE,
        (c.subframe + i * z) % SUBFRAMES_PER_FRAME,
        z,
    )


def reserved_chain(c: SsrCoord, rc: int, rt: int) -> list[SsrCoord]:
    if rc < 1:
        raise ValueError("rc must be >= 1")
    return [co_map(c, k, rt) for k in range(rc)]


def co_map_index(index, subchannel, i, rt):
    """Vectorised :func:`co_map` on combined ``frame*10 + subframe`` indices."""
    step = _check_rt(rt)
    index = np.asarray(index)
    frame = (index // SUBFRAMES_PER_FRAME + np.asarray(i) * step) % FRAMES_PER_CYCLE
    sub = (index % SUBFRAMES_PER_FRAME + np.asarray(i) * np.asarray(subchannel)) % SUBFRAMES_PER_FRAME
    return frame * SUBFRAMES_PER_FRAME + sub


def chain_offset(index: int, subchannel: int, hop: int, rt: int) -> int:
    """Subframes elapsed between the anchor and its ``hop``-th reserved SSR.

    Each hop advances the frame by ``rt/10`` and the in-frame subframe by
    ``subchannel`` (mod 10, no carry), so the elapsed time is exact for any hop
    count, including chains that span several SFN cycles.
    """
    step = _check_rt(rt)
    if hop < 0:
        raise ValueError("hop index must be non-negative")
    y = index % SUBFRAMES_PER_FRAME
    return hop * step * SUBFRAMES_PER_FRAME + (y + hop * subchannel) % SUBFRAMES_PER_FRAME - y


@lru_cache(maxsize=64)
def orbit_table(rt: int, subchannel: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Orbit decomposition of ``co_map(., 1, rt)`` on one subchannel.

    Returns ``(orbit_id, position, length)`` arrays indexed by combined
    frame/subframe index, such that ``co_map(c, k)`` is the element at position
    ``(position[c] + k) % length`` of the same orbit. All orbits of a
    product of two cyclic shifts share one length.
    """
    step = _check_rt(rt)
    orbit_id = np.full(CYCLE, -1, dtype=np.int64)
    position = np.zeros(CYCLE, dtype=np.int64)
    length = 0
    oid = 0
    for start in range(CYCLE):
        if orbit_id[start] >= 0:
            continue
        idx, k = start, 0
        while orbit_id[idx] < 0:
            orbit_id[idx] = oid
            position[idx] = k
            frame = (idx // 10 + step) % FRAMES_PER_CYCLE
            sub = (idx % 10 + subchannel) % 10
            idx = frame * 10 + sub
            k += 1
        length = k
        oid += 1
    orbit_id.setflags(write=False)
    position.setflags(write=False)
    return orbit_id, position, length
