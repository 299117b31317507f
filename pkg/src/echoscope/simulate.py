"""Scenario runs: a full detector against the simulated transport."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .channel import isolated_rtts, simulate_trace
from .config import build_topologies, load_catalog
from .orchestrator import (
    AlertEmitter,
    CycleResult,
    DetectorConfig,
    FileSink,
    HostRegistry,
    JsonlLog,
    Orchestrator,
)
from .prober import rate_from_rtt
from .prober.sim import SimTransport
from .profiler import save_profile
from .signal import MAX_FRAME, ExcitationSignal, generate_mls, modulate


@dataclass
class SimulationRun:
    results: list[CycleResult]
    orchestrator: Orchestrator
    transport: SimTransport

    def alerts(self) -> list[dict]:
        return [r.alert for r in self.results if r.alert is not None]


def build_simulation(cfg: dict, score_log=None, emitter=None) -> Orchestrator:
    if cfg["seed"] is None:
        raise ValueError("simulation needs a seed")
    tops = build_topologies(cfg, load_catalog(cfg["timing"]))
    transport = SimTransport(tops, cfg["seed"])
    registry = HostRegistry()
    for addr in tops:
        registry.admit(addr)

    def label(host: str, index: int) -> bool:
        atk = tops[host].attack
        return atk is not None and atk.active_for(index)

    return Orchestrator(registry, transport, DetectorConfig.from_config(cfg), seed=cfg["seed"],
                        emitter=emitter, score_log=score_log, label_fn=label)


def run_scenario(cfg: dict, log_dir: str | None = None, cycles: int | None = None) -> SimulationRun:
    """Runs ``cycles`` (default ``run.probes``) probe cycles; with ``log_dir``
    writes ``scores.jsonl``, ``alerts.jsonl`` and ``profiles/<host>.json``."""
    cycles = cfg["run"]["probes"] if cycles is None else cycles
    if log_dir is None:
        orch = build_simulation(cfg)
        return SimulationRun(orch.run(cycles), orch, orch.transport)
    os.makedirs(log_dir, exist_ok=True)
    alerts_path = os.path.join(log_dir, "alerts.jsonl")
    open(alerts_path, "w").close()
    with JsonlLog(os.path.join(log_dir, "scores.jsonl")) as scores:
        orch = build_simulation(cfg, scores, AlertEmitter([FileSink(alerts_path)],
                                                          cfg["detector"]["alert_dedup_s"]))
        results = orch.run(cycles)
    prof_dir = cfg["run"]["profile_dir"] or os.path.join(log_dir, "profiles")
    for addr, entry in orch.registry.gamma.items():
        if entry.profile is not None:
            save_profile(entry.profile, os.path.join(prof_dir, f"{addr}.json"))
    return SimulationRun(results, orch, orch.transport)


def regression_dataset(top, n_signals: int, k: int, rng: np.random.Generator, m: int = 10,
                       rate_hz: float | None = None) -> tuple[list, list]:
    """``n_signals`` random MLS excitations cut to their first ``k`` requests,
    and the RTTs the channel returns for them. Later requests cannot affect
    earlier replies, so simulating only the prefix is exact."""
    if rate_hz is None:
        rate_hz = rate_from_rtt(float(np.nanmean(isolated_rtts(top, MAX_FRAME, 50, rng))))
    seeds = _GeneratorSeeds(rng)
    X, Y = [], []
    for _ in range(n_signals):
        sizes = modulate(generate_mls(m, seeds)).sizes[:k]
        x = ExcitationSignal(sizes, signal_id=0, rate_hz=rate_hz)
        _, trace = simulate_trace(top, x, rng)
        X.append(sizes)
        Y.append(trace.rtt_s)
    return X, Y


class _GeneratorSeeds:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def getrandbits(self, k: int) -> int:
        return int.from_bytes(self.rng.bytes((k + 7) // 8), "little") & ((1 << k) - 1)
