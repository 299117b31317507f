"""Transport-independent probing: rate calibration, reply matching, y/z signals."""

from __future__ import annotations

import threading
from dataclasses import replace
from typing import Protocol

import numpy as np

from ..signal import MAX_FRAME, ExcitationSignal
from .types import EchoResponse, EmptyResponseError, ProbeError, RawProbe

# replies later than this multiple of mu_RTT* are treated as lost
TIMEOUT_FACTOR = 10.0
# a probe losing more than this fraction of replies is flagged degraded
DEGRADED_LOSS = 0.2


class CalibrationError(ProbeError):
    pass


class TransportError(ProbeError):
    """Raised by a transport mid-probe; ``partial`` keeps whatever was captured."""

    def __init__(self, msg: str, partial: RawProbe | None = None):
        super().__init__(msg)
        self.partial = partial


class Transport(Protocol):
    def ping(self, target: str, nbytes: int, count: int) -> np.ndarray:
        """RTTs in seconds of ``count`` isolated pings; NaN where lost."""

    def send(self, target: str, x: ExcitationSignal) -> RawProbe:
        """Emit ``x`` at ``x.rate_hz`` and capture the matched replies."""


def rate_from_rtt(mu_rtt_star: float) -> float:
    """Transmission rate f_s = 2 / mu_RTT*."""
    if not mu_rtt_star > 0:
        raise CalibrationError("mean RTT must be positive")
    return 2.0 / mu_rtt_star


def calibrate_rate(transport: Transport, target: str, n_samples: int = 50) -> tuple[float, float]:
    """Returns ``(f_s, mu_rtt_star)`` from isolated maximum-size pings."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rtts = np.asarray(transport.ping(target, MAX_FRAME, n_samples), dtype=float)
    rtts = rtts[np.isfinite(rtts)]
    if rtts.size == 0:
        raise CalibrationError(f"no calibration ping to {target} was answered")
    mu = float(rtts.mean())
    return rate_from_rtt(mu), mu


class MatchTable:
    """Lock-protected (signal_id, sequence) -> timestamps table shared by
    the emitter and receiver roles of one probe."""

    def __init__(self, signal_id: int, n: int):
        self.signal_id = signal_id
        self.tx = np.full(n, np.nan)
        self.rx = np.full(n, np.nan)
        self.duplicates = 0
        self.strays = 0
        self._lock = threading.Lock()

    def sent(self, seq: int, t_ns: float) -> None:
        with self._lock:
            if not np.isnan(self.tx[seq]):
                raise ProbeError(f"sequence {seq} transmitted twice")
            self.tx[seq] = t_ns

    def received(self, ident: int, seq: int, t_ns: float) -> bool:
        """Records a reply; False for foreign, unknown or duplicate replies."""
        with self._lock:
            if ident != self.signal_id or not 0 <= seq < self.rx.size or np.isnan(self.tx[seq]):
                self.strays += 1
                return False
            if not np.isnan(self.rx[seq]):
                self.duplicates += 1
                return False
            self.rx[seq] = t_ns
            return True

    def complete(self) -> bool:
        with self._lock:
            return bool(np.all(np.isfinite(self.rx)))

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        with self._lock:
            return self.tx.copy(), self.rx.copy()


def apply_timeout(p: RawProbe, timeout_s: float, loss_threshold: float = DEGRADED_LOSS) -> RawProbe:
    """Drops replies slower than ``timeout_s`` and sets the degraded flag."""
    rx = p.rx_ns.copy()
    late = (rx - p.tx_ns) > timeout_s * 1e9
    rx[late] = np.nan
    out = replace(p, rx_ns=rx)
    if out.loss_fraction > loss_threshold:
        out = replace(out, degraded=True)
    return out


def probe(transport: Transport, target: str, x: ExcitationSignal, timeout_s: float = np.inf,
          loss_threshold: float = DEGRADED_LOSS) -> RawProbe:
    """Sends one excitation signal; a transport failure yields an aborted probe."""
    if len(x) == 0 or not x.rate_hz > 0:
        raise ValueError("excitation must be nonempty with a positive rate")
    try:
        raw = transport.send(target, x)
    except TransportError as exc:
        if exc.partial is not None:
            raw = exc.partial
        else:
            nan = np.full(len(x), np.nan)
            raw = RawProbe(x.signal_id, np.arange(len(x), dtype=float), nan)
        return replace(raw, target=target, aborted=True, degraded=True)
    raw = replace(raw, target=target)
    return apply_timeout(raw, timeout_s, loss_threshold)


def _jitter(rx: np.ndarray) -> np.ndarray:
    both = np.isfinite(rx[1:]) & np.isfinite(rx[:-1])
    return (rx[1:] - rx[:-1])[both]


def compute_response(p: RawProbe) -> EchoResponse:
    """y[n] = rx[n] - tx[n]; z over index-consecutive received pairs (seconds)."""
    got = p.received
    if not got.any():
        raise EmptyResponseError("no echo reply received")
    y = (p.rx_ns - p.tx_ns) * 1e-9
    z = _jitter(p.rx_ns) * 1e-9
    lost = frozenset(int(i) for i in np.flatnonzero(~got))
    return EchoResponse(y=y, z=z, losses=lost)


def impute_lost(p: RawProbe, timeout_s: float) -> EchoResponse:
    """Complete response for feature extraction: a lost reply is taken to have
    arrived exactly at its timeout, so y and z both carry the loss."""
    if not np.isfinite(timeout_s):
        raise ValueError("imputation needs a finite timeout")
    lost = ~p.received
    rx = np.where(lost, p.tx_ns + timeout_s * 1e9, p.rx_ns)
    y = (rx - p.tx_ns) * 1e-9
    z = np.diff(rx) * 1e-9
    return EchoResponse(y=y, z=z, losses=frozenset(int(i) for i in np.flatnonzero(lost)))
