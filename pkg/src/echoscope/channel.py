"""Store-and-forward LAN timing simulator with man-in-the-middle injection.

A probe's request frames leave the local host, cross every element of the
path (each one fully buffers a frame before transmitting it), are answered by
the responder and return over the reversed path. Each element direction is a
FIFO server, so the whole round trip is a tandem queue that is evaluated stage
by stage in arrival order.

Per-hop time for a ``B``-byte frame is

    prop + B * trans + (fixed + B * proc_base * (1 + load_gain * depth)) * noise

where ``depth`` counts the frames still inside that element (queued, being
serialised, or in its fixed-latency pipeline) and ``noise`` is a unit-mean
lognormal factor. ``prop`` and ``fixed`` are pipeline latency; the per-byte
terms occupy the element.
"""

from __future__ import annotations

import heapq
import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .prober.types import RawProbe
from .signal import MAX_FRAME, MIN_FRAME, ExcitationSignal

ATTACK_KINDS = ("EP-TD", "IL-NB", "IL-DH", "IP-DH")
EVASIONS = ("none", "DoS", "Spoof", "Replay", "BypassA", "BypassB")


@dataclass(frozen=True)
class ElementTiming:
    prop_s: float = 0.0
    trans_s_per_byte: float = 0.0
    proc_base_s_per_byte: float = 0.0
    proc_load_gain: float = 0.0
    noise_scale: float = 0.0
    warmup_penalty_s: float = 0.0
    fixed_s: float = 0.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (value >= 0.0 and math.isfinite(value)):
                raise ValueError(f"ElementTiming.{name} must be finite and >= 0")

    def quiet(self) -> "ElementTiming":
        """Same element with noise and warm-up disabled."""
        return replace(self, noise_scale=0.0, warmup_penalty_s=0.0)


@dataclass(frozen=True)
class ResponderTiming:
    nic: ElementTiming
    reply_s_per_byte: float

    def __post_init__(self):
        if not self.reply_s_per_byte > 0:
            raise ValueError("responder reply_s_per_byte must be > 0")

    def quiet(self) -> "ResponderTiming":
        return replace(self, nic=self.nic.quiet())


@dataclass(frozen=True)
class Evasion:
    kind: str = "none"
    drop_prob: float = 1.0
    spoof: ResponderTiming | None = None
    bypass_period: int = 10
    bypass_active: int = 1
    # Replay: "transmit" re-bases the recording onto the sender's transmit
    # times; "observed" re-bases onto request arrivals at the interceptor.
    replay_rebase: str = "transmit"

    def __post_init__(self):
        if self.kind not in EVASIONS:
            raise ValueError(f"unknown evasion {self.kind!r}; expected one of {EVASIONS}")
        if self.replay_rebase not in ("transmit", "observed"):
            raise ValueError(f"unknown replay re-basing {self.replay_rebase!r}")
        if self.kind == "Spoof" and self.spoof is None:
            raise ValueError("Spoof evasion needs the spoofing responder's timing")


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    interceptor: ElementTiming
    position: int = 0
    evasion: Evasion = field(default_factory=Evasion)
    onset_probe: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack {self.kind!r}; expected one of {ATTACK_KINDS}")

    def active_for(self, probe_index: int) -> bool:
        """Whether the interceptor is in active mode for the given probe."""
        if probe_index < self.onset_probe:
            return False
        if self.evasion.kind == "BypassB":
            phase = (probe_index - self.onset_probe) % self.evasion.bypass_period
            return phase < self.evasion.bypass_active
        return True


@dataclass(frozen=True)
class Traffic:
    """Poisson background frames competing for the path's switch ports."""

    switch_rate_hz: float = 0.0
    host_rate_hz: float = 0.0
    burst_prob: float = 0.0
    burst_factor: float = 1.0
    size_min: int = 64
    size_max: int = 1518


@dataclass(frozen=True)
class SimTopology:
    sender: ElementTiming
    path: tuple[ElementTiming, ...]
    responder: ResponderTiming
    attack: AttackConfig | None = None
    traffic: Traffic = field(default_factory=Traffic)
    warmup_packets: int = 5
    tx_jitter_s: float = 0.0
    timeout_s: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(self.path))
        if len(self.path) < 1:
            raise ValueError("path needs at least one element")
        if self.attack is not None:
            hi = len(self.path) if self.attack.kind.startswith("IL") else len(self.path) - 1
            if not 0 <= self.attack.position <= hi:
                raise ValueError(f"attack position {self.attack.position} outside 0..{hi}")

    def quiet(self) -> "SimTopology":
        """Noise, warm-up, scheduler jitter and cross traffic all switched off."""
        attack = self.attack
        if attack is not None:
            ev = attack.evasion
            if ev.spoof is not None:
                ev = replace(ev, spoof=ev.spoof.quiet())
            attack = replace(attack, interceptor=attack.interceptor.quiet(), evasion=ev)
        return replace(
            self,
            sender=self.sender.quiet(),
            path=tuple(e.quiet() for e in self.path),
            responder=self.responder.quiet(),
            attack=attack,
            traffic=Traffic(),
            tx_jitter_s=0.0,
        )

    def benign(self) -> "SimTopology":
        return replace(self, attack=None)


def hop_time(e: ElementTiming, nbytes: float, queue_depth: int = 0,
             noise: float = 1.0) -> float:
    """Time for one element to pass a frame on: latency plus occupancy."""
    proc = e.proc_base_s_per_byte * (1.0 + e.proc_load_gain * queue_depth)
    return e.prop_s + nbytes * e.trans_s_per_byte + (e.fixed_s + nbytes * proc) * noise


@dataclass
class ElementQueue:
    """FIFO state of one element direction, for stepping frames by hand."""

    timing: ElementTiming
    free_at: float = -math.inf
    _inside: list = field(default_factory=list)

    def depth_at(self, t: float) -> int:
        while self._inside and self._inside[0] <= t:
            heapq.heappop(self._inside)
        return len(self._inside)

    def admit(self, arrival: float, nbytes: float, noise: float = 1.0) -> float:
        """Queue a fully received frame; return when the next element has it."""
        e = self.timing
        depth = self.depth_at(arrival)
        latency = e.prop_s + e.fixed_s * noise
        occ = hop_time(e, nbytes, depth, noise) - latency
        self.free_at = max(arrival, self.free_at) + occ
        heapq.heappush(self._inside, self.free_at + latency)
        return self.free_at + latency


# -- stage chain -----------------------------------------------------------

@dataclass(frozen=True)
class _Stage:
    key: str
    timing: ElementTiming
    reply_s_per_byte: float = 0.0  # > 0 marks a reply-processing stage
    cross_rate_hz: float = 0.0
    first_only: bool = False       # bypass A: only frame 0 is intercepted
    drop_prob: float = 0.0

    def per_byte(self) -> tuple[float, float]:
        """(constant, load/noise-scaled) occupancy per byte."""
        if self.reply_s_per_byte > 0:
            return 0.0, self.reply_s_per_byte
        return self.timing.trans_s_per_byte, self.timing.proc_base_s_per_byte

    def latency(self) -> tuple[float, float]:
        """(constant, noise-scaled) pipeline latency."""
        if self.reply_s_per_byte > 0:
            return 0.0, 0.0
        return self.timing.prop_s, self.timing.fixed_s


def _responder_stages(prefix: str, r: ResponderTiming, host_rate: float) -> list[_Stage]:
    return [
        _Stage(f"{prefix}:reply", r.nic, reply_s_per_byte=r.reply_s_per_byte,
               cross_rate_hz=host_rate),
        _Stage(f"{prefix}:nic", r.nic),
    ]


@dataclass(frozen=True)
class _Plan:
    forward: list          # stages up to (and including) the answering host
    backward: list         # stages from the answering host back to the sender
    replay_at: int | None = None   # index in forward where a replayer sits


def _plan(top: SimTopology, replay_armed: bool = False) -> _Plan:
    tr = top.traffic
    sw = [(f"sw{i}", e) for i, e in enumerate(top.path)]
    fwd_sw = [_Stage(f"fwd:{k}", e, cross_rate_hz=tr.switch_rate_hz) for k, e in sw]
    rev_sw = [_Stage(f"rev:{k}", e, cross_rate_hz=tr.switch_rate_hz) for k, e in sw]
    sender = _Stage("tx:local", top.sender)
    answer = _responder_stages("host", top.responder, tr.host_rate_hz)
    atk = top.attack
    if atk is None:
        return _Plan([sender] + fwd_sw + answer, rev_sw[::-1])

    p = atk.position
    ic = atk.interceptor
    ev = atk.evasion
    rate = tr.switch_rate_hz if atk.kind.startswith(("IL", "IP")) else 0.0
    drop = ev.drop_prob if ev.kind == "DoS" else 0.0
    first_only = ev.kind == "BypassA"
    ic_fwd = _Stage("fwd:mitm", ic, cross_rate_hz=rate, first_only=first_only, drop_prob=drop)
    ic_rev = _Stage("rev:mitm", ic, cross_rate_hz=rate, first_only=first_only)

    if atk.kind.startswith("IL"):
        # spliced into the cable in front of switch p (p == len(path): in front of the host)
        f_before, f_after = fwd_sw[:p], fwd_sw[p:]
        r_before, r_after = rev_sw[:p], rev_sw[p:]
        fwd_mid, rev_mid = [ic_fwd], [ic_rev]
    elif atk.kind == "IP-DH":
        # switch p replaced by a device that also runs the interception pipeline
        f_before, f_after = fwd_sw[:p + 1], fwd_sw[p + 1:]
        r_before, r_after = rev_sw[:p + 1], rev_sw[p + 1:]
        fwd_mid, rev_mid = [ic_fwd], [ic_rev]
    else:  # EP-TD: switch p diverts frames out to the attacker's port and back
        e = top.path[p]
        f_before = fwd_sw[:p] + [_Stage(f"fwd:sw{p}:to-mitm", e, cross_rate_hz=tr.switch_rate_hz)]
        f_after = fwd_sw[p:]
        r_before = rev_sw[:p + 1]
        r_after = [_Stage(f"rev:sw{p}:to-mitm", e, cross_rate_hz=tr.switch_rate_hz)] + rev_sw[p + 1:]
        fwd_mid, rev_mid = [ic_fwd], [ic_rev]

    back_tail = r_before[::-1]  # from the interceptor towards the sender
    if ev.kind == "Spoof":
        spoof = _responder_stages("spoof", ev.spoof, tr.host_rate_hz)
        return _Plan([sender] + f_before + spoof, back_tail)
    if ev.kind == "Replay" and replay_armed:
        return _Plan([sender] + f_before + fwd_mid, rev_mid + back_tail,
                     replay_at=len(f_before) + 1)
    forward = [sender] + f_before + fwd_mid + f_after + answer
    backward = r_after[::-1] + rev_mid + back_tail
    return _Plan(forward, backward)


def closed_form_rtt(top: SimTopology, nbytes: float) -> float:
    """Round-trip time of an isolated frame with noise, load and queueing absent.

    Sum of per-hop times over both trips plus ``B * reply``; a Replay plan is
    not closed-form and is rejected.
    """
    plan = _plan(top)
    total = 0.0
    for st in plan.forward + plan.backward:
        if st.reply_s_per_byte > 0:
            total += nbytes * st.reply_s_per_byte
        else:
            total += hop_time(st.timing, nbytes)
    return total


# -- simulation ------------------------------------------------------------

def _stream(base: int, key: str) -> np.random.Generator:
    return np.random.default_rng([base, zlib.crc32(key.encode())])


def _serve(stage: _Stage, arr: np.ndarray, idx: np.ndarray, sizes: np.ndarray,
           rng: np.random.Generator, warmup_n: int, bg_rate: float,
           size_range: tuple[int, int]) -> np.ndarray:
    """Departure-plus-latency times of the frames (in the given arrival order)."""
    t = stage.timing
    n = arr.size
    c_pb, v_pb = stage.per_byte()
    gain = t.proc_load_gain
    sigma = t.noise_scale
    if sigma > 0:
        noise = rng.lognormal(-0.5 * sigma * sigma, sigma, n).tolist()
    else:
        noise = [1.0] * n
    warm = [0.0] * n
    if t.warmup_penalty_s > 0 and warmup_n > 0:
        draw = rng.exponential(1.0, n) if sigma > 0 else np.ones(n)
        for j, i in enumerate(idx.tolist()):
            if i < warmup_n:
                warm[j] = t.warmup_penalty_s * (warmup_n - i) / warmup_n * draw[j]

    bg_t: list[float] = []
    bg_b: list[float] = []
    bg_nz: list[float] = []
    if bg_rate > 0 and n:
        lo, hi = float(arr[0]) - 2e-3, float(arr[-1])
        count = rng.poisson(bg_rate * (hi - lo))
        bg_t = np.sort(rng.uniform(lo, hi, count)).tolist()
        bg_b = rng.integers(size_range[0], size_range[1] + 1, count).astype(float).tolist()
        if sigma > 0:
            bg_nz = rng.lognormal(-0.5 * sigma * sigma, sigma, count).tolist()
        else:
            bg_nz = [1.0] * count

    prop, fixed = stage.latency()
    a_list = arr.tolist()
    b_list = sizes.tolist()
    out = [0.0] * n
    inside: list = []
    push, pop = heapq.heappush, heapq.heappop
    free = -math.inf
    i = j = 0
    nb = len(bg_t)
    while i < n:
        if j < nb and bg_t[j] < a_list[i]:
            a, nbytes, nz, w, probe = bg_t[j], bg_b[j], bg_nz[j], 0.0, False
            j += 1
        else:
            a, nbytes, nz, w, probe = a_list[i], b_list[i], noise[i], warm[i], True
        while inside and inside[0] <= a:
            pop(inside)
        occ = nbytes * (c_pb + v_pb * (1.0 + gain * len(inside)) * nz) + w
        free = (a if a > free else free) + occ
        leave = free + prop + fixed * nz
        push(inside, leave)
        if probe:
            out[i] = leave
            i += 1
    return np.asarray(out)


@dataclass
class ReplayMemory:
    """Capacity-one store of the last complete response the interceptor saw."""

    turnaround: np.ndarray | None = None   # reply-at-interceptor minus request-at-interceptor
    rtt: np.ndarray | None = None          # the round-trip signal the sender measured


@dataclass
class SimTrace:
    rtt_s: np.ndarray           # NaN where lost
    arrivals: dict              # stage key -> per-index arrival time at that stage


def _run(stages: list, t0: np.ndarray, idx: np.ndarray, sizes_all: np.ndarray,
         base: int, burst: float, top: SimTopology, arrivals: dict,
         start_at: int = 0) -> tuple[np.ndarray, np.ndarray]:
    times, live = t0, idx
    size_range = (top.traffic.size_min, top.traffic.size_max)
    for st in stages[start_at:]:
        if live.size == 0:
            break
        order = np.argsort(times, kind="stable")
        times, live = times[order], live[order]
        rec = np.full(sizes_all.size, np.nan)
        rec[live] = times
        arrivals[st.key] = rec
        rng = _stream(base, st.key)
        if st.drop_prob > 0:
            keep = rng.random(live.size) >= st.drop_prob
            times, live = times[keep], live[keep]
            if live.size == 0:
                break
        if st.first_only:
            hit = live == 0
            out = times.copy()
            if hit.any():
                out[hit] = _serve(st, times[hit], live[hit], sizes_all[live[hit]], rng,
                                  top.warmup_packets, 0.0, size_range)
            times = out
            continue
        times = _serve(st, times, live, sizes_all[live], rng, top.warmup_packets,
                       st.cross_rate_hz * burst, size_range)
    return times, live


def simulate_trace(top: SimTopology, x: ExcitationSignal, rng: np.random.Generator,
                   replay: ReplayMemory | None = None) -> tuple[RawProbe, SimTrace]:
    if len(x) == 0:
        raise ValueError("empty excitation")
    if not x.rate_hz > 0:
        raise ValueError("excitation rate must be positive")
    sizes = np.asarray(x.sizes, dtype=float)
    n = sizes.size
    base = int(rng.integers(0, 2 ** 62))
    sched = _stream(base, "sched")
    tx = np.arange(n) / x.rate_hz
    if top.tx_jitter_s > 0:
        tx = tx + np.minimum(sched.exponential(top.tx_jitter_s, n), 0.45 / x.rate_hz)
    burst = top.traffic.burst_factor if sched.random() < top.traffic.burst_prob else 1.0

    armed = (top.attack is not None and top.attack.evasion.kind == "Replay"
             and replay is not None and replay.turnaround is not None)
    plan = _plan(top, replay_armed=armed)
    arrivals: dict = {}
    idx = np.arange(n)
    t, live = _run(plan.forward, tx, idx, sizes, base, burst, top, arrivals)

    if armed and top.attack.evasion.replay_rebase == "transmit":
        # the recorded RTTs come back lined up with the new transmit times
        rec = replay.rtt[live % replay.rtt.size]
        t = tx[live] + np.where(np.isfinite(rec), rec, np.nanmedian(replay.rtt))
    elif armed:
        rel = replay.turnaround[live % replay.turnaround.size]
        rel = np.where(np.isfinite(rel), rel, np.nanmedian(replay.turnaround))
        # answered from the recording, never before the request is in hand
        t = arrivals["fwd:mitm"][live] + np.maximum(rel, 0.0)
        t, live = _run(plan.backward, t, live, sizes, base, burst, top, arrivals)
    else:
        t, live = _run(plan.backward, t, live, sizes, base, burst, top, arrivals)

    rx = np.full(n, np.nan)
    rx[live] = t
    rtt = rx - tx
    late = rtt > top.timeout_s
    rx[late] = np.nan
    rtt[late] = np.nan

    if (top.attack is not None and top.attack.evasion.kind == "Replay" and replay is not None
            and not armed and "rev:mitm" in arrivals):
        seen = arrivals["rev:mitm"] - arrivals["fwd:mitm"]
        if np.all(np.isfinite(seen)) and np.all(np.isfinite(rtt)):
            replay.turnaround = seen
            replay.rtt = rtt.copy()

    probe = RawProbe(signal_id=x.signal_id, tx_ns=tx * 1e9, rx_ns=rx * 1e9)
    return probe, SimTrace(rtt_s=rtt, arrivals=arrivals)


def simulate_probe(top: SimTopology, x: ExcitationSignal, rng: np.random.Generator,
                   replay: ReplayMemory | None = None) -> RawProbe:
    """Event-driven round trip of every request in ``x``; see module docstring."""
    return simulate_trace(top, x, rng, replay)[0]


def isolated_rtts(top: SimTopology, nbytes: int, count: int, rng: np.random.Generator,
                  spacing_s: float = 0.01) -> np.ndarray:
    """RTTs of ``count`` same-size pings spaced far enough apart not to queue."""
    sizes = np.full(count, int(nbytes))
    x = ExcitationSignal(sizes=sizes, signal_id=0, rate_hz=1.0 / spacing_s)
    return simulate_trace(top, x, rng)[1].rtt_s


def frame_sizes_ok(sizes: Iterable[int]) -> bool:
    s = np.asarray(list(sizes))
    return bool(np.all((s >= MIN_FRAME) & (s <= MAX_FRAME)))
