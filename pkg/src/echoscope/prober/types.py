from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ProbeError(RuntimeError):
    pass


class EmptyResponseError(ProbeError):
    """No echo reply came back at all (treated downstream as DoS evidence)."""


@dataclass(frozen=True)
class RawProbe:
    """Per-index transmit/receive timestamps in nanoseconds.

    ``rx_ns`` holds NaN for requests whose reply was lost or timed out.
    Timestamps share an arbitrary per-probe origin.
    """

    signal_id: int
    tx_ns: np.ndarray = field(repr=False)
    rx_ns: np.ndarray = field(repr=False)
    target: str = ""
    degraded: bool = False
    aborted: bool = False

    def __post_init__(self):
        tx = np.asarray(self.tx_ns, dtype=float)
        rx = np.asarray(self.rx_ns, dtype=float)
        if tx.shape != rx.shape:
            raise ValueError("tx_ns and rx_ns must align index by index")
        if tx.size > 1 and not np.all(np.diff(tx) > 0):
            raise ValueError("tx_ns must be strictly increasing")
        got = np.isfinite(rx)
        if np.any(rx[got] < tx[got]):
            raise ValueError("a reply cannot precede its request")
        object.__setattr__(self, "tx_ns", tx)
        object.__setattr__(self, "rx_ns", rx)

    def __len__(self) -> int:
        return self.tx_ns.size

    @property
    def received(self) -> np.ndarray:
        return np.isfinite(self.rx_ns)

    @property
    def loss_fraction(self) -> float:
        return 1.0 - float(self.received.mean()) if len(self) else 1.0

    @property
    def duration_s(self) -> float:
        """From the first request to the last reply (or last request)."""
        end = np.nanmax(self.rx_ns) if self.received.any() else self.tx_ns[-1]
        return float(max(end, self.tx_ns[-1]) - self.tx_ns[0]) * 1e-9


@dataclass(frozen=True)
class EchoResponse:
    """RTT signal ``y`` and jitter ``z`` in seconds; ``y`` is NaN at lost indices."""

    y: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    losses: frozenset = frozenset()
