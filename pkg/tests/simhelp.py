"""Small builders for simulator-backed tests."""

import numpy as np

from echoscope.channel import closed_form_rtt
from echoscope.config import build_topologies, load_config, scenario_path
from echoscope.prober import rate_from_rtt
from echoscope.signal import MAX_FRAME, generate_mls, modulate
from oracles import FixedSeeds


def scenario_topology(name="benign_1switch", **overrides):
    cfg = load_config(scenario_path(name), overrides)
    return next(iter(build_topologies(cfg).values()))


def excitation(m=10, seed=1, top=None, rate_hz=None):
    if rate_hz is None:
        top = top if top is not None else scenario_topology().benign()
        rate_hz = rate_from_rtt(closed_form_rtt(top.quiet().benign(), MAX_FRAME))
    return modulate(generate_mls(m, FixedSeeds(seed)), rate_hz=rate_hz)


def seeds(rng):
    """Deterministic MLS seeds drawn from a numpy generator."""

    class _S:
        def getrandbits(self, k):
            return int(rng.integers(1, 2 ** k))

    return _S()


def probes(top, count, rng, m=10, rate_hz=None):
    """``count`` random-phase probes through ``top``; yields (x, RawProbe)."""
    from echoscope.channel import simulate_probe
    src = seeds(rng)
    if rate_hz is None:
        rate_hz = rate_from_rtt(closed_form_rtt(top.quiet().benign(), MAX_FRAME))
    for _ in range(count):
        x = modulate(generate_mls(m, src), rate_hz=rate_hz)
        yield x, simulate_probe(top, x, rng)


__all__ = ["scenario_topology", "excitation", "seeds", "probes", "np"]
