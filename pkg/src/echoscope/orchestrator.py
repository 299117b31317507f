"""Host registry, probe scheduling, per-host profile routing and alerting."""

from __future__ import annotations

import ipaddress
import json
import logging
import math
import sys
import threading
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .analysis import jitter_histogram
from .features import DegradedFeatureError, FeatureVector, JitterReferenceSet, extract
from .profiler import HostProfile, Verdict, evaluate
from .prober import Transport, calibrate_rate, impute_lost, probe
from .signal import MAX_FRAME, MIN_FRAME, SeedSource, generate_mls, modulate

log = logging.getLogger(__name__)

# initial TTLs of common IP stacks; a reply carrying one of these crossed no router
INITIAL_TTLS = frozenset({32, 64, 128, 255})


def probe_bandwidth(n: int, probes_per_s: float = 1.0) -> dict:
    """Average probe load for binary MLS excitation (half large, half small frames)."""
    per_probe = n * (MIN_FRAME + MAX_FRAME) // 2
    return {
        "bytes_per_probe": per_probe,
        "bytes_per_s": per_probe * probes_per_s,
        "bits_per_s": per_probe * 8 * probes_per_s,
    }


# -- registry ----------------------------------------------------------------

@dataclass
class HostEntry:
    address: str
    first_seen: float
    profile: HostProfile | None = None
    rate_hz: float | None = None
    mu_rtt_star: float | None = None
    probes: int = 0
    busy: bool = False
    scores: deque = field(default_factory=deque)


@dataclass
class _Pending:
    attempts: int
    retry_at: float


class HostRegistry:
    """The set of protected hosts on the local subnet."""

    def __init__(self, local_subnet: str | None = None, local_address: str | None = None,
                 backoff_s: float = 1.0, max_backoff_s: float = 300.0):
        self.local_subnet = ipaddress.ip_network(local_subnet) if local_subnet else None
        self.local_address = local_address
        self.gamma: dict[str, HostEntry] = {}
        self.pending: dict[str, _Pending] = {}
        self.backoff_s = backoff_s
        self.max_backoff_s = max_backoff_s
        self.lock = threading.Lock()

    def __contains__(self, addr: str) -> bool:
        return addr in self.gamma

    def __len__(self) -> int:
        return len(self.gamma)

    def hosts(self) -> list[str]:
        with self.lock:
            return sorted(self.gamma)

    def _in_subnet(self, addr: str) -> bool:
        if self.local_subnet is None:
            return True
        return ipaddress.ip_address(addr) in self.local_subnet

    def observe_address(self, addr: str, ttl_evidence: int | None, now: float = 0.0) -> str:
        """``'known'``, ``'admitted'``, ``'rejected'`` or ``'deferred'``.

        ``ttl_evidence`` is the TTL of the verification reply, None if it went
        unanswered (the address is then retried with exponential backoff).
        """
        ipaddress.ip_address(addr)  # raises ValueError if malformed
        with self.lock:
            if addr in self.gamma:
                return "known"
            if addr == self.local_address or not self._in_subnet(addr):
                self.pending.pop(addr, None)
                return "rejected"
            if ttl_evidence is None:
                p = self.pending.get(addr, _Pending(0, now))
                delay = min(self.backoff_s * 2 ** p.attempts, self.max_backoff_s)
                self.pending[addr] = _Pending(p.attempts + 1, now + delay)
                return "deferred"
            self.pending.pop(addr, None)
            if ttl_evidence not in INITIAL_TTLS:
                return "rejected"
            self.gamma[addr] = HostEntry(addr, now)
            return "admitted"

    def admit(self, addr: str, now: float = 0.0) -> HostEntry:
        """Declared host (simulation): admitted without a verification ping."""
        with self.lock:
            if addr not in self.gamma:
                self.gamma[addr] = HostEntry(addr, now)
            return self.gamma[addr]

    def due_retries(self, now: float) -> list[str]:
        with self.lock:
            return sorted(a for a, p in self.pending.items() if p.retry_at <= now)

    def remove(self, addr: str) -> None:
        with self.lock:
            self.gamma.pop(addr, None)


def schedule_next(registry: HostRegistry, rng: np.random.Generator) -> tuple[str, float] | None:
    """A uniformly random host and a delay in (0, 1] s; None when there is no host."""
    hosts = registry.hosts()
    if not hosts:
        return None
    host = hosts[int(rng.integers(len(hosts)))]
    delay = 1.0 - rng.random()
    return host, delay


# -- alerting ----------------------------------------------------------------

class AlertSink(Protocol):
    def deliver(self, record: dict) -> None: ...


class StderrSink:
    def deliver(self, record: dict) -> None:
        print(f"ALERT {json.dumps(record, sort_keys=True)}", file=sys.stderr)


class FileSink:
    def __init__(self, path: str):
        self.path = path

    def deliver(self, record: dict) -> None:
        with open(self.path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")


class CallbackSink:
    def __init__(self, fn: Callable[[dict], None]):
        self.fn = fn

    def deliver(self, record: dict) -> None:
        self.fn(record)


class AlertEmitter:
    """Fans alerts out to sinks. A failing sink keeps its backlog and is
    retried, oldest first, on every later emit or flush; nothing blocks."""

    def __init__(self, sinks=(), dedup_s: float = 0.0):
        self.sinks = list(sinks)
        self.backlog = [deque() for _ in self.sinks]
        self.dedup_s = dedup_s
        self._last: dict[str, float] = {}
        self.suppressed = 0

    def flush(self) -> None:
        for sink, queue in zip(self.sinks, self.backlog):
            while queue:
                try:
                    sink.deliver(queue[0])
                except Exception as exc:  # any sink failure is retried later
                    log.warning("alert sink %r failed: %s", sink, exc)
                    break
                queue.popleft()

    def emit_alert(self, host: str, score: float, context: dict) -> dict | None:
        t = float(context.get("t", 0.0))
        last = self._last.get(host)
        if self.dedup_s > 0 and last is not None and t - last < self.dedup_s:
            self.suppressed += 1
            return None
        self._last[host] = t
        record = {
            "host": host,
            "t": t,
            "score": score,
            "windowed": context.get("windowed"),
            "threshold": context.get("threshold"),
            "features": context.get("features"),
            "probe": context.get("probe"),
        }
        for queue in self.backlog:
            queue.append(record)
        self.flush()
        return record


# -- the detection loop ------------------------------------------------------

@dataclass(frozen=True)
class DetectorConfig:
    m: int = 10
    p_thr: float = 1e-4
    grace_n: int = 100
    guard_a: int = 5
    learning_rate: float = 0.1
    hidden: int = 2
    window: int = 60
    grace_rate: float = 5.0
    jitter_refs: int = 5
    jitter_history: int = 15
    timeout_factor: float = 10.0
    loss_threshold: float = 0.2
    calibration_pings: int = 50
    rate_hz: float | None = None

    @classmethod
    def from_config(cls, cfg: dict) -> "DetectorConfig":
        d, p = cfg["detector"], cfg["probe"]
        return cls(m=p["m"], p_thr=d["p_thr"], grace_n=d["grace_n"], guard_a=d["guard_a"],
                   learning_rate=d["learning_rate"], hidden=d["hidden"], window=d["window"],
                   grace_rate=d["grace_rate"], jitter_refs=d["jitter_refs"],
                   jitter_history=d["jitter_history"], timeout_factor=p["timeout_factor"],
                   loss_threshold=p["loss_threshold"], calibration_pings=p["calibration_pings"],
                   rate_hz=p["rate_hz"])


@dataclass(frozen=True)
class CycleResult:
    host: str
    t: float
    probe_index: int
    features: FeatureVector
    verdict: Verdict
    windowed: float
    windowed_alert: bool
    degraded: bool
    grace: bool
    alert: dict | None = None
    label: bool | None = None
    z_hist: list | None = None


class _NumpySeeds:
    """SeedSource drawing from a numpy Generator (deterministic runs)."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def getrandbits(self, k: int) -> int:
        out = 0
        for shift in range(0, k, 32):
            out |= int(self.rng.integers(0, 2 ** 32)) << shift
        return out & ((1 << k) - 1)


class Orchestrator:
    def __init__(self, registry: HostRegistry, transport: Transport, config: DetectorConfig,
                 seed: int | None = None, emitter: AlertEmitter | None = None,
                 score_log=None, seed_source: SeedSource | None = None,
                 label_fn: Callable[[str, int], bool] | None = None,
                 wall_clock: Callable[[], float] | None = None,
                 sleep: Callable[[float], None] | None = None):
        self.registry = registry
        self.transport = transport
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.seeds = seed_source or (_NumpySeeds(np.random.default_rng([seed, 1]))
                                     if seed is not None else None)
        self.emitter = emitter or AlertEmitter()
        self.score_log = score_log
        self.label_fn = label_fn
        self.wall_clock = wall_clock
        self.sleep = sleep or (lambda s: None)
        self.clock = 0.0
        self.slot_end = 0.0
        self._host_rng: dict[str, np.random.Generator] = {}

    def _rng_for(self, host: str, stream: int) -> np.random.Generator:
        key = (host, stream)
        if key not in self._host_rng:
            parts = [zlib.crc32(host.encode()), stream]
            self._host_rng[key] = np.random.default_rng(
                ([self.seed] if self.seed is not None else []) + parts)
        return self._host_rng[key]

    def _ensure_ready(self, entry: HostEntry) -> None:
        c = self.config
        if entry.profile is None:
            entry.profile = HostProfile.new(
                self._rng_for(entry.address, 0), grace_n=c.grace_n, guard_a=c.guard_a,
                learning_rate=c.learning_rate, n_hidden=c.hidden,
                jitter=JitterReferenceSet(m=c.jitter_refs, k=c.jitter_history))
        if entry.rate_hz is None:
            if c.rate_hz is not None:
                entry.rate_hz = float(c.rate_hz)
                entry.mu_rtt_star = 2.0 / entry.rate_hz
            else:
                entry.rate_hz, entry.mu_rtt_star = calibrate_rate(
                    self.transport, entry.address, c.calibration_pings)
        if entry.scores.maxlen != c.window:
            entry.scores = deque(entry.scores, maxlen=c.window)

    def slot_length(self, entry: HostEntry) -> float:
        """Scheduling slot: one second, shortened by grace_rate while in grace."""
        if entry.profile is not None and entry.profile.in_grace:
            return 1.0 / self.config.grace_rate
        return 1.0

    def plan_start(self, entry: HostEntry, u: float, now: float) -> float:
        """Start time for the next probe: fraction ``u`` into the next free slot.

        Slots never overlap and each holds one probe start, so the global
        rate stays at or below one probe per slot.
        """
        begin = max(self.slot_end, now)
        self.slot_end = begin + self.slot_length(entry)
        return begin + u * (self.slot_end - begin)

    def run_cycle(self, host: str | None = None, delay: float | None = None) -> CycleResult | None:
        """One pass of select, excite, capture, extract, score, alert.

        ``delay`` is the position in (0, 1] of the probe inside its slot.
        """
        if host is None:
            pick = schedule_next(self.registry, self.rng)
            if pick is None:
                return None
            host, delay = pick
        entry = self.registry.gamma[host]
        if entry.busy:
            raise RuntimeError(f"probe already in flight for {host}")
        self._ensure_ready(entry)
        u = 1.0 if delay is None else delay
        if self.wall_clock is None:
            self.clock = self.plan_start(entry, u, self.clock)
        else:
            start = self.plan_start(entry, u, self.wall_clock())
            self.sleep(max(0.0, start - self.wall_clock()))
            self.clock = self.wall_clock()
        entry.busy = True
        try:
            return self._probe_and_score(entry)
        finally:
            entry.busy = False

    def _probe_and_score(self, entry: HostEntry) -> CycleResult:
        c = self.config
        prof = entry.profile
        index = entry.probes
        label = self.label_fn(entry.address, index) if self.label_fn else None
        x = modulate(generate_mls(c.m, self.seeds), rate_hz=entry.rate_hz)
        timeout = c.timeout_factor * entry.mu_rtt_star
        raw = probe(self.transport, entry.address, x, timeout, c.loss_threshold)
        entry.probes += 1
        t = self.clock
        self.clock += raw.duration_s if raw.received.any() else len(x) / entry.rate_hz + timeout
        resp = impute_lost(raw, timeout)
        try:
            fv, prof.jitter = extract(resp, x, prof.jitter, self._rng_for(entry.address, 1))
        except DegradedFeatureError:
            # nothing usable came back: a worst-case vector
            fv = FeatureVector(math.inf, timeout, -math.inf)
        vec = np.nan_to_num(fv.as_array(), posinf=1e300, neginf=-1e300)
        grace = prof.in_grace
        verdict = evaluate(prof, vec, c.p_thr, timestamp=t)
        entry.scores.append(verdict.score)
        windowed = float(np.mean(entry.scores))
        w_alert = bool(not grace and len(entry.scores) == c.window
                       and windowed > verdict.threshold)
        alert = None
        if verdict.is_alert:
            alert = self.emitter.emit_alert(entry.address, verdict.score, {
                "t": t, "windowed": windowed, "threshold": verdict.threshold,
                "features": fv.as_list(), "probe": index})
        result = CycleResult(entry.address, t, index, fv, verdict, windowed, w_alert,
                             raw.degraded, grace, alert, label, jitter_histogram(resp.z))
        if self.score_log is not None:
            self.score_log.write(score_record(result))
        return result

    def run(self, cycles: int) -> list[CycleResult]:
        out = []
        for _ in range(cycles):
            r = self.run_cycle()
            if r is not None:
                out.append(r)
        return out


def _finite(v: float):
    return v if math.isfinite(v) else None


def score_record(r: CycleResult) -> dict:
    rec = {
        "t": r.t,
        "host": r.host,
        "probe": r.probe_index,
        "rmse": r.verdict.score,
        "windowed": r.windowed,
        "threshold": _finite(r.verdict.threshold),
        "is_alert": r.verdict.is_alert,
        "windowed_alert": r.windowed_alert,
        "trained": r.verdict.trained,
        "grace": r.grace,
        "degraded": r.degraded,
        "features": [_finite(v) for v in r.features.as_list()],
    }
    if r.label is not None:
        rec["attack"] = r.label
    if r.z_hist is not None:
        rec["z_hist"] = r.z_hist
    return rec


class JsonlLog:
    """Line-delimited JSON records with sorted keys (byte-stable across runs)."""

    def __init__(self, path: str):
        self.path = path
        self._f = open(path, "w")

    def write(self, record: dict) -> None:
        self._f.write(json.dumps(record, sort_keys=True) + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
