import json
import math
import os

import numpy as np
import pytest

from echoscope.channel import ReplayMemory, closed_form_rtt, simulate_probe
from echoscope.features import (
    DegradedFeatureError,
    FeatureVector,
    JitterReferenceSet,
    extract,
    impulse_energy,
    jitter_feature,
    ks_statistic,
    ks_two_sample,
    ks_two_sample_logp,
    mean_rtt_large,
)
from echoscope.features.ks import kolmogorov_logsf
from echoscope.prober import compute_response, impute_lost
from echoscope.signal import MAX_FRAME, ExcitationSignal
from oracles import direct_dft
from simhelp import excitation, probes, scenario_topology

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures", "ks_reference.json")


def _explicit_energy(x, y):
    """Deconvolve with direct-sum transforms, then sum |h[t]|^2 in time."""
    ratio = direct_dft(y) / direct_dft(x)
    n = len(x)
    h = np.array([sum(ratio[k] * np.exp(2j * np.pi * k * t / n) for k in range(n)) / n
                  for t in range(n)])
    return float(np.sum(np.abs(h) ** 2))


# -- impulse energy ----------------------------------------------------------

def test_scaled_input_gives_c_squared():
    x = excitation(m=6).sizes
    assert impulse_energy(x, 3.5 * x) == pytest.approx(3.5 ** 2, rel=1e-12)


@pytest.mark.parametrize("d", [1, 5, 30])
def test_circular_delay_has_unit_energy(d):
    x = excitation(m=6).sizes
    assert impulse_energy(x, np.roll(x, d)) == pytest.approx(1.0, rel=1e-12)


def test_parseval_against_explicit_deconvolution_n8():
    rng = np.random.default_rng(8)
    x = rng.uniform(42, 1542, 8)
    y = rng.uniform(1e-4, 3e-4, 8)
    assert impulse_energy(x, y) == pytest.approx(_explicit_energy(x, y), rel=1e-9)


def test_energy_invariant_to_joint_shift():
    rng = np.random.default_rng(1)
    x = excitation(m=7).sizes
    y = rng.uniform(1e-4, 2e-4, x.size)
    assert impulse_energy(np.roll(x, 17), np.roll(y, 17)) == pytest.approx(
        impulse_energy(x, y), rel=1e-12)


def test_energy_identical_for_every_rotation_of_the_excitation():
    # an MLS rotation keeps every |X[k]|, so only |Y| matters
    rng = np.random.default_rng(2)
    x = excitation(m=7).sizes
    y = rng.uniform(1e-4, 2e-4, x.size)
    assert impulse_energy(np.roll(x, 40), y) == pytest.approx(impulse_energy(x, y), rel=1e-12)


def test_vanishing_bins_are_skipped(caplog):
    x = np.full(6, 100.0)   # only the DC bin is nonzero
    y = np.arange(6.0)
    e = impulse_energy(x, y)
    assert e == pytest.approx((y.sum() / x.sum()) ** 2, rel=1e-12)
    assert "near-zero" in caplog.text


def test_energy_length_mismatch():
    with pytest.raises(ValueError):
        impulse_energy(np.ones(4), np.ones(5))


# -- mean RTT of large frames ----------------------------------------------

def test_mean_rtt_large_example():
    assert mean_rtt_large(np.array([1542, 42, 1542]), [10, 3, 20]) == 15


def test_mean_rtt_large_constant():
    x = excitation(m=5)
    assert mean_rtt_large(x, np.full(31, 2.5e-4)) == pytest.approx(2.5e-4, rel=1e-15)


def test_mean_rtt_large_ignores_small_frames():
    x = excitation(m=5)
    y = np.random.default_rng(0).uniform(size=31)
    y2 = y.copy()
    y2[~x.large] = 99.0
    assert mean_rtt_large(x, y) == mean_rtt_large(x, y2)


def test_mean_rtt_large_without_large_frames():
    with pytest.raises(DegradedFeatureError):
        mean_rtt_large(np.array([42, 42]), [1.0, 2.0])


def test_mean_rtt_large_il_shift_noise_off():
    top = scenario_topology("il_dh_onset").quiet()
    ic = top.attack.interceptor
    x = excitation(m=8, top=top)
    rng = np.random.default_rng(0)
    benign = compute_response(simulate_probe(top.benign(), x, rng)).y
    attacked = compute_response(simulate_probe(top, x, rng)).y
    from echoscope.channel import hop_time
    shift = mean_rtt_large(x, attacked) - mean_rtt_large(x, benign)
    assert shift == pytest.approx(2 * hop_time(ic, MAX_FRAME), rel=1e-9)


# -- KS ---------------------------------------------------------------------

def test_ks_identical_samples():
    a = np.random.default_rng(4).normal(size=50)
    assert ks_statistic(a, a) == 0.0
    assert ks_two_sample(a, a) == 1.0


def test_ks_disjoint_supports():
    a = np.linspace(0, 1, 100)
    b = np.linspace(2, 3, 100)
    assert ks_statistic(a, b) == 1.0
    assert ks_two_sample(a, b) < 1e-6


def test_ks_matches_frozen_reference():
    with open(FIXTURES) as f:
        cases = json.load(f)["cases"]
    for c in cases:
        assert ks_statistic(c["a"], c["b"]) == pytest.approx(c["statistic"], abs=1e-12)
        assert abs(ks_two_sample(c["a"], c["b"]) - c["pvalue"]) < 1e-3


def test_ks_30_40_fixture_is_close():
    with open(FIXTURES) as f:
        cases = [c for c in json.load(f)["cases"] if len(c["a"]) == 30 and len(c["b"]) == 40]
    assert cases
    for c in cases:
        assert abs(ks_two_sample(c["a"], c["b"]) - c["pvalue"]) < 1e-9


def test_ks_logp_stays_finite_far_in_the_tail():
    a = np.linspace(0, 1, 1000)
    lp = ks_two_sample_logp(a, a + 5)
    assert math.isfinite(lp) and lp < -500


def test_ks_needs_two_observations():
    with pytest.raises(ValueError):
        ks_two_sample([1.0], [1.0, 2.0])


def test_kolmogorov_tail_branches_meet():
    # both series are evaluated near the switch point
    lo, hi = kolmogorov_logsf(1.0 - 1e-9), kolmogorov_logsf(1.0 + 1e-9)
    assert lo == pytest.approx(hi, abs=1e-7)
    assert kolmogorov_logsf(0.0) == 0.0


# -- jitter feature ---------------------------------------------------------

def test_jitter_identical_reference_gives_zero():
    z = np.random.default_rng(0).exponential(1e-4, 200)
    st = JitterReferenceSet(refs=(z.copy(),))
    v, _ = jitter_feature(z, st, np.random.default_rng(1))
    assert v == 0.0


def test_jitter_far_shifted_reference_is_strongly_negative():
    z = np.random.default_rng(0).exponential(1e-4, 200)
    st = JitterReferenceSet(refs=(z + 1.0,))
    v, st2 = jitter_feature(z, st, np.random.default_rng(1))
    assert v < -50
    assert st2.p_history[-1] == v


def test_jitter_first_observation_fills_refs():
    z = np.arange(10.0)
    v, st = jitter_feature(z, JitterReferenceSet(), np.random.default_rng(0))
    assert v == 0.0 and len(st.refs) == 1


def test_jitter_history_capped_at_k():
    st = JitterReferenceSet(m=2, k=3)
    rng = np.random.default_rng(0)
    for i in range(10):
        _, st = jitter_feature(rng.normal(size=30), st, rng)
    assert len(st.p_history) == 3 and len(st.refs) == 2


def test_jitter_stays_high_on_benign_probes():
    top = scenario_topology()
    rng = np.random.default_rng(11)
    st = JitterReferenceSet(m=5, k=15)
    values = []
    for x, raw in probes(top, 20, rng):
        v, st = jitter_feature(compute_response(raw).z, st, rng)
        values.append(v)
    assert min(values) > math.log(0.01)


def test_jitter_is_deterministic_under_seed():
    rng = np.random.default_rng(3)
    zs = [rng.normal(size=100) for _ in range(12)]

    def chain(seed):
        st, out = JitterReferenceSet(m=3, k=4), []
        r = np.random.default_rng(seed)
        for z in zs:
            v, st = jitter_feature(z, st, r)
            out.append(v)
        return out, st

    (a, sa), (b, sb) = chain(5), chain(5)
    assert a == b
    assert all(np.array_equal(p, q) for p, q in zip(sa.refs, sb.refs))


def test_jitter_empty_sample_is_degraded():
    with pytest.raises(DegradedFeatureError):
        jitter_feature([], JitterReferenceSet(), np.random.default_rng(0))


def test_reference_set_round_trip():
    st = JitterReferenceSet(m=3, k=7, refs=(np.array([1.0, 2.0]),), p_history=(-0.5,))
    back = JitterReferenceSet.from_dict(json.loads(json.dumps(st.to_dict())))
    assert back.m == 3 and back.k == 7 and back.p_history == (-0.5,)
    assert np.array_equal(back.refs[0], st.refs[0])


# -- extract ----------------------------------------------------------------

def test_extract_noise_off_matches_closed_form():
    # frames spaced far apart so none is still inside an element when the next arrives
    top = scenario_topology().quiet()
    rng = np.random.default_rng(0)
    st = JitterReferenceSet()
    energies = []
    for x, raw in probes(top, 5, rng, m=8, rate_hz=100.0):
        fv, st = extract(compute_response(raw), x, st, rng)
        energies.append(fv.v_eh)
        assert fv.v_rtt_star == pytest.approx(closed_form_rtt(top, MAX_FRAME), rel=1e-9)
    assert np.ptp(energies) <= 1e-9 * np.mean(energies)


def test_extract_leaves_inputs_untouched():
    top = scenario_topology()
    rng = np.random.default_rng(1)
    (x, raw), = list(probes(top, 1, rng, m=8))
    resp = compute_response(raw)
    y0, z0, s0 = resp.y.copy(), resp.z.copy(), x.sizes.copy()
    st = JitterReferenceSet(refs=(z0.copy(),))
    extract(resp, x, st, rng)
    assert np.array_equal(resp.y, y0) and np.array_equal(resp.z, z0)
    assert np.array_equal(x.sizes, s0) and len(st.refs) == 1


def test_extract_rejects_unimputed_losses():
    x = ExcitationSignal(np.array([1542, 42, 1542]), rate_hz=1.0)
    resp = type("R", (), {"y": np.array([1.0, np.nan, 1.0]), "z": np.array([1.0])})()
    with pytest.raises(DegradedFeatureError):
        extract(resp, x, JitterReferenceSet(), np.random.default_rng(0))


def test_dos_spikes_all_three_features():
    top = scenario_topology("dos")
    rng = np.random.default_rng(5)
    st = JitterReferenceSet()
    benign = []
    for x, raw in probes(top.benign(), 8, rng):
        fv, st = extract(compute_response(raw), x, st, rng)
        benign.append(fv.as_array())
    benign = np.array(benign)
    timeout = 10 * closed_form_rtt(top.quiet().benign(), MAX_FRAME)
    (x, raw), = list(probes(top, 1, rng))
    assert not raw.received.any()
    fv, _ = extract(impute_lost(raw, timeout), x, st, rng)
    mu, sd = benign.mean(axis=0), benign.std(axis=0, ddof=1)
    assert (fv.v_eh - mu[0]) / sd[0] > 20
    assert fv.v_rtt_star > 5 * benign[:, 1].max()
    assert fv.v_jit < benign[:, 2].min() - 10


def test_replayed_response_moves_impulse_energy():
    top = scenario_topology("replay")
    rng = np.random.default_rng(6)
    benign = [impulse_energy(x, compute_response(raw).y)
              for x, raw in probes(top.benign(), 30, rng)]
    mem = ReplayMemory()
    src = np.random.default_rng(7)
    from simhelp import seeds
    from echoscope.signal import generate_mls, modulate
    rate = 2.0 / closed_form_rtt(top.quiet().benign(), MAX_FRAME)
    replayed = []
    s = seeds(src)
    for i in range(6):
        x = modulate(generate_mls(10, s), rate_hz=rate)
        raw = simulate_probe(top, x, rng, mem)
        if i > 0:
            replayed.append(impulse_energy(x, compute_response(raw).y))
    assert mem.rtt is not None
    assert min(replayed) > max(benign)


def test_feature_vector_views():
    fv = FeatureVector(1.0, 2.0, -3.0)
    assert fv.as_list() == [1.0, 2.0, -3.0]
    assert fv.as_array().tolist() == [1.0, 2.0, -3.0]
