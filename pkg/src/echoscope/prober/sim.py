"""Transport backed by the channel simulator."""

from __future__ import annotations

import zlib

import numpy as np

from ..channel import ReplayMemory, SimTopology, SimTrace, isolated_rtts, simulate_trace
from ..signal import ExcitationSignal
from .core import TransportError
from .types import RawProbe


class SimTransport:
    """Each target has its own topology, RNG stream, probe counter and
    replay memory, so hosts do not perturb one another's draws."""

    def __init__(self, topologies: dict[str, SimTopology], seed: int):
        self.topologies = dict(topologies)
        self.seed = int(seed)
        self._rng = {h: np.random.default_rng([self.seed, zlib.crc32(h.encode())])
                     for h in self.topologies}
        self.probes_sent = {h: 0 for h in self.topologies}
        self.replay = {h: ReplayMemory() for h in self.topologies}
        self.last_trace: SimTrace | None = None
        self.elapsed_s = 0.0

    def _top(self, target: str) -> SimTopology:
        try:
            return self.topologies[target]
        except KeyError:
            raise TransportError(f"unknown simulated host {target!r}") from None

    def effective(self, target: str, probe_index: int) -> SimTopology:
        """Topology seen by the given probe: the attack only while it is active."""
        top = self._top(target)
        if top.attack is not None and not top.attack.active_for(probe_index):
            return top.benign()
        return top

    def ping(self, target: str, nbytes: int, count: int) -> np.ndarray:
        top = self.effective(target, self.probes_sent.get(target, 0))
        return isolated_rtts(top, nbytes, count, self._rng[target])

    def send(self, target: str, x: ExcitationSignal) -> RawProbe:
        top = self.effective(target, self.probes_sent.get(target, 0))
        raw, trace = simulate_trace(top, x, self._rng[target], self.replay[target])
        self.probes_sent[target] += 1
        self.last_trace = trace
        self.elapsed_s += raw.duration_s
        return raw
