"""32-bit sidelink control information (SCI) codec.

Field order, most significant first::

    rri_code (4) | frl (F) | mcs (5) | tx_format (1) | reserved (14 - F) | tail (8)

where ``F = ceil(log2(sc*(sc+1)/2))``. In the proposed format the 8-bit tail
carries the reselection counter; in the standard format it is the opaque
priority/retransmission byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

STANDARD = "standard"
PROPOSED = "proposed"
FORMATS = (STANDARD, PROPOSED)

WORD_BITS = 32


class SciError(ValueError):
    """Malformed SCI word or out-of-range field."""


@dataclass(frozen=True)
class SciMessage:
    rri_code: int = 0
    frl: int = 0
    mcs: int = 0
    tx_format: int = 0
    rc: Optional[int] = None  # proposed format only
    opaque: int = 0  # standard format only: priority + retransmission byte


def frl_bits(sc: int) -> int:
    if sc < 1:
        raise ValueError("subchannel count must be >= 1")
    n = sc * (sc + 1) // 2
    return (n - 1).bit_length()  # exact ceil(log2(n)) for integers


def _layout(sc: int):
    f = frl_bits(sc)
    if f > 14:
        raise ValueError(f"sc={sc} needs {f} frl bits; at most 14 fit")
    # (name, width, shift)
    return (
        ("rri_code", 4, 28),
        ("frl", f, 28 - f),
        ("mcs", 5, 23 - f),
        ("tx_format", 1, 22 - f),
        ("reserved", 14 - f, 8),
        ("tail", 8, 0),
    )


def _check_format(fmt: str) -> None:
    if fmt not in FORMATS:
        raise ValueError(f"unknown SCI format {fmt!r}")


def encode_sci(m: SciMessage, sc: int, fmt: str = PROPOSED) -> int:
    _check_format(fmt)
    if fmt == PROPOSED:
        if m.rc is None:
            raise SciError("rc: required by the proposed format")
        tail = m.rc
    else:
        tail = m.opaque
    values = {
        "rri_code": m.rri_code,
        "frl": m.frl,
        "mcs": m.mcs,
        "tx_format": m.tx_format,
        "reserved": 0,
        "tail": tail,
    }
    word = 0
    for name, width, shift in _layout(sc):
        v = values[name]
        if v < 0 or v >= (1 << width):
            label = "rc" if name == "tail" and fmt == PROPOSED else name
            raise SciError(f"{label}: value {v} does not fit in {width} bits")
        word |= v << shift
    if m.frl >= sc * (sc + 1) // 2:
        raise SciError(f"frl: value {m.frl} >= {sc * (sc + 1) // 2}")
    return word


def decode_sci(word: int, sc: int, fmt: str = PROPOSED) -> SciMessage:
    _check_format(fmt)
    if not 0 <= word < (1 << WORD_BITS):
        raise SciError(f"word {word:#x} is not a 32-bit value")
    f = {name: (word >> shift) & ((1 << width) - 1) for name, width, shift in _layout(sc)}
    if f["frl"] >= sc * (sc + 1) // 2:
        raise SciError(f"frl: malformed value {f['frl']} for sc={sc}")
    if fmt == PROPOSED:
        return SciMessage(f["rri_code"], f["frl"], f["mcs"], f["tx_format"], rc=f["tail"])
    return SciMessage(f["rri_code"], f["frl"], f["mcs"], f["tx_format"], opaque=f["tail"])


def decode_fields(words, sc: int) -> dict[str, np.ndarray]:
    """Vectorised field extraction (no validation) for arrays of SCI words."""
    words = np.asarray(words, dtype=np.int64)
    return {
        name: (words >> shift) & ((1 << width) - 1)
        for name, width, shift in _layout(sc)
    }


def hexdump(word: int, sc: int, fmt: str = PROPOSED) -> str:
    m = decode_sci(word, sc, fmt)
    tail = f"rc={m.rc}" if fmt == PROPOSED else f"opaque={m.opaque:#04x}"
    return (
        f"{word:08x}  rri_code={m.rri_code} frl={m.frl} mcs={m.mcs} "
        f"tx_format={m.tx_format} {tail}"
    )


def min_rc_bits(rc_min: int, rc_max: int) -> int:
    """Bits needed to signal any counter value in ``[rc_min, rc_max]``."""
    return math.ceil(math.log2(rc_max - rc_min + 1))
