"""Probe summarisation: impulse energy, large-frame mean RTT, jitter likelihood."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..signal import MAX_FRAME, ExcitationSignal
from .dft import dft
from .ks import ks_two_sample_logp

log = logging.getLogger(__name__)

# |X[k]| below this fraction of max|X| is treated as a numerically empty bin
BIN_EPS = 1e-9
# random reference-update gate: v_jit must exceed log(0.5)
UPDATE_GATE = math.log(0.5)
UPDATE_PROB = 0.5


class DegradedFeatureError(ValueError):
    """A feature cannot be formed from this probe (no usable replies)."""


@dataclass(frozen=True)
class FeatureVector:
    v_eh: float
    v_rtt_star: float
    v_jit: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_eh, self.v_rtt_star, self.v_jit], dtype=float)

    def as_list(self) -> list[float]:
        return [self.v_eh, self.v_rtt_star, self.v_jit]


@dataclass(frozen=True)
class JitterReferenceSet:
    """Stored jitter samples for one host plus the recent p_jit history."""

    m: int = 5
    k: int = 15
    refs: tuple[np.ndarray, ...] = field(default=(), repr=False)
    p_history: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "k": self.k,
            "refs": [r.tolist() for r in self.refs],
            "p_history": list(self.p_history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JitterReferenceSet":
        return cls(
            m=int(d["m"]),
            k=int(d["k"]),
            refs=tuple(np.asarray(r, dtype=float) for r in d["refs"]),
            p_history=tuple(float(p) for p in d["p_history"]),
        )


def impulse_energy(x: ExcitationSignal | np.ndarray, y) -> float:
    """Energy of the deconvolved impulse response, (1/N) sum |Y[k]/X[k]|^2.

    Bins where X vanishes are skipped and N is reduced accordingly.
    """
    sizes = np.asarray(x.sizes if isinstance(x, ExcitationSignal) else x, dtype=float)
    y = np.asarray(y, dtype=float)
    if sizes.shape != y.shape:
        raise ValueError(f"x and y lengths differ: {sizes.size} != {y.size}")
    big_x = dft(sizes)
    big_y = dft(y)
    mag = np.abs(big_x)
    keep = mag > BIN_EPS * mag.max()
    if not keep.all():
        log.warning("impulse_energy: %d near-zero excitation bins excluded",
                    int((~keep).sum()))
    ratio = big_y[keep] / big_x[keep]
    return float(np.sum(ratio.real ** 2 + ratio.imag ** 2) / keep.sum())


def mean_rtt_large(x: ExcitationSignal | np.ndarray, y) -> float:
    sizes = np.asarray(x.sizes if isinstance(x, ExcitationSignal) else x)
    y = np.asarray(y, dtype=float)
    sel = y[(sizes == MAX_FRAME) & np.isfinite(y)]
    if sel.size == 0:
        raise DegradedFeatureError("no maximum-size frame was answered")
    return float(sel.mean())


def jitter_feature(z0, state: JitterReferenceSet, rng: np.random.Generator
                   ) -> tuple[float, JitterReferenceSet]:
    z0 = np.asarray(z0, dtype=float)
    if z0.size == 0:
        raise DegradedFeatureError("empty jitter sample")
    if not state.refs:
        p_jit = 0.0
    elif z0.size < 2:
        raise DegradedFeatureError("jitter sample too short for a KS test")
    else:
        p_jit = max(ks_two_sample_logp(z0, ref) for ref in state.refs)
    history = (state.p_history + (p_jit,))[-state.k:]
    v_jit = min(0.0, float(np.mean(history)))

    refs = state.refs
    if len(refs) < state.m:
        refs = refs + (z0.copy(),)
    elif v_jit > UPDATE_GATE and rng.random() < UPDATE_PROB:
        refs = refs[1:] + (z0.copy(),)
    return v_jit, replace(state, refs=refs, p_history=history)


def extract(resp, x: ExcitationSignal, state: JitterReferenceSet,
            rng: np.random.Generator) -> tuple[FeatureVector, JitterReferenceSet]:
    """Reduce a complete (lost replies imputed) echo response to a feature vector."""
    y = np.asarray(resp.y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DegradedFeatureError("response has unimputed lost replies")
    v_eh = impulse_energy(x, y)
    v_rtt = mean_rtt_large(x, y)
    v_jit, state = jitter_feature(resp.z, state, rng)
    return FeatureVector(v_eh, v_rtt, v_jit), state
