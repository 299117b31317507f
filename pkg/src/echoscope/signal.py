"""Maximal-length sequences and their ICMP payload-size modulation."""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field
from itertools import count
from typing import Protocol

import numpy as np

MIN_FRAME = 42
MAX_FRAME = 1542

# Feedback taps per register count, stepped as in the reference generator:
# out = state[idx]; fb = out ^ state[(t + idx) % m] for t in taps; state[idx] = fb.
TAPS: dict[int, tuple[int, ...]] = {
    2: (1,), 3: (2,), 4: (3,), 5: (3,), 6: (5,), 7: (6,), 8: (7, 6, 1),
    9: (5,), 10: (7,), 11: (9,), 12: (11, 10, 4), 13: (12, 11, 8),
    14: (13, 12, 2), 15: (14,), 16: (15, 13, 4), 17: (14,), 18: (11,),
    19: (18, 17, 14), 20: (17,), 21: (19,), 22: (21,), 23: (18,),
    24: (23, 22, 17), 25: (22,), 26: (25, 24, 20), 27: (26, 25, 22),
    28: (25,), 29: (27,), 30: (29, 28, 7), 31: (28,), 32: (31, 30, 10),
}


class SeedSource(Protocol):
    def getrandbits(self, k: int) -> int: ...


class SecureSeedSource:
    """OS CSPRNG seeds; the default outside tests so probes cannot be predicted."""

    def getrandbits(self, k: int) -> int:
        return secrets.randbits(k)


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class MlsSequence:
    m: int
    bits: np.ndarray = field(repr=False)
    seed: int

    def __len__(self) -> int:
        return len(self.bits)


_signal_ids = count(1)


@dataclass(frozen=True)
class ExcitationSignal:
    sizes: np.ndarray = field(repr=False)
    signal_id: int = 0
    rate_hz: float = 0.0

    def __len__(self) -> int:
        return len(self.sizes)

    @property
    def large(self) -> np.ndarray:
        """Boolean mask of maximum-size frames."""
        return self.sizes == MAX_FRAME


def lfsr_bits(m: int, state: int, length: int | None = None) -> np.ndarray:
    """Step the register from ``state`` (bit i is register cell i)."""
    taps = TAPS[m]
    cells = [(state >> i) & 1 for i in range(m)]
    n = (1 << m) - 1 if length is None else length
    out = np.empty(n, dtype=np.uint8)
    idx = 0
    for i in range(n):
        fb = cells[idx]
        out[i] = fb
        for t in taps:
            fb ^= cells[(t + idx) % m]
        cells[idx] = fb
        idx = idx + 1 if idx + 1 < m else 0
    return out


def generate_mls(m: int, seed_source: SeedSource | None = None) -> MlsSequence:
    """Full-period LFSR output of length 2**m - 1 from a random nonzero state."""
    if not isinstance(m, (int, np.integer)) or not 2 <= m <= 32:
        raise ParameterError(f"register count must be in 2..32, got {m!r}")
    m = int(m)
    src = seed_source if seed_source is not None else SecureSeedSource()
    seed = 0
    while seed == 0:
        seed = src.getrandbits(m)
    return MlsSequence(m=m, bits=lfsr_bits(m, seed), seed=seed)


def modulate(s: MlsSequence | np.ndarray, signal_id: int | None = None,
             rate_hz: float = 0.0) -> ExcitationSignal:
    bits = np.asarray(s.bits if isinstance(s, MlsSequence) else s, dtype=np.uint8)
    if bits.size == 0:
        raise ParameterError("cannot modulate an empty sequence")
    sizes = np.where(bits == 1, MAX_FRAME, MIN_FRAME).astype(np.int64)
    sid = next(_signal_ids) & 0xFFFF if signal_id is None else signal_id
    return ExcitationSignal(sizes=sizes, signal_id=sid, rate_hz=rate_hz)


def demodulate(x: ExcitationSignal) -> np.ndarray:
    sizes = np.asarray(x.sizes)
    if not np.all((sizes == MIN_FRAME) | (sizes == MAX_FRAME)):
        raise ParameterError("only binary 42/1542 excitations can be demodulated")
    return (sizes == MAX_FRAME).astype(np.uint8)


@dataclass(frozen=True)
class FlatnessReport:
    max_rel_deviation: float
    power: np.ndarray = field(repr=False)

    def is_flat(self, tol: float = 1e-6) -> bool:
        return self.max_rel_deviation <= tol


def spectral_flatness(s: MlsSequence | np.ndarray) -> FlatnessReport:
    """Relative spread of |S[k]|^2 over the non-DC bins of the +/-1 mapped sequence."""
    from .features.dft import dft

    bits = np.asarray(s.bits if isinstance(s, MlsSequence) else s, dtype=float)
    power = np.abs(dft(2.0 * bits - 1.0))[1:] ** 2
    if power.size == 0:
        return FlatnessReport(0.0, power)
    mean = power.mean()
    dev = float(np.max(np.abs(power - mean)) / mean) if mean > 0 else float("inf")
    return FlatnessReport(dev, power)
