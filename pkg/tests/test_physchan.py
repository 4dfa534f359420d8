import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memqkd import physchan as pc


def ev(det, t, true=False):
    return pc.DetectionEvent(det, t, true)


def test_survival():
    assert pc.survival_probability(0.0) == 1.0
    assert pc.survival_probability(10.0) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        pc.survival_probability(-1.0)


@settings(max_examples=100)
@given(st.floats(0, 60), st.floats(0, 60))
def test_survival_monotone(l1, l2):
    lo, hi = sorted((l1, l2))
    assert pc.survival_probability(hi) <= pc.survival_probability(lo)


def test_profile_fwhm_calibration():
    prof = pc.ArrivalProfile.calibrated(9.3, 1.3)
    assert prof.fwhm() == pytest.approx(9.3, rel=1e-6)
    assert float(prof.cdf(1e4)) == pytest.approx(1.0)
    assert float(prof.pdf(-1.0)) == 0.0


def test_profile_sampling_matches_cdf(rng):
    prof = pc.ChannelParams().profile
    t = prof.sample(rng, 200_000)
    for x in (5.0, 15.0, 30.0):
        assert np.mean(t <= x) == pytest.approx(float(prof.cdf(x)), abs=4e-3)


def test_degenerate_profile():
    prof = pc.ArrivalProfile.calibrated(0.5, 1.3)
    assert prof.rise_ns == prof.decay_ns
    assert prof.fwhm() == pytest.approx(0.5, rel=1e-6)


def test_gate_is_monotone():
    ch = pc.ChannelParams()
    acc = [ch.gate_acceptance(g) for g in (1, 5, 15, 50, 100)]
    assert all(a < b for a, b in zip(acc, acc[1:]))


def test_loss_is_referenced_to_operating_gate():
    ch = pc.ChannelParams(loss_db=20.0)
    p = ch.click_probability() * ch.gate_acceptance(ch.reference_gate_ns)
    assert p == pytest.approx(0.01)


def test_gate_and_dead_time():
    events = [ev("V", 3.0), ev("V", 10.0), ev("H", 40.0)]
    assert [e.arrival_time_ns for e in pc.registered_clicks(events, 20.0)] == [3.0, 40.0]
    assert pc.apply_gate(events, 15.0) == events[:2]
    assert not pc.double_click_filter(events, 20.0)
    assert pc.double_click_filter(events[:2], 20.0)
    with pytest.raises(ValueError):
        pc.apply_gate(events, 0.0)


def test_resolve_click():
    ch = pc.ChannelParams()
    assert pc.resolve_click([ev("H", 4.0, True)], ch) == 1
    assert pc.resolve_click([ev("V", 4.0), ev("H", 6.0)], ch) is None
    assert pc.resolve_click([ev("V", 40.0)], ch) is None
    assert pc.resolve_click([ev("V", 40.0)], ch, gate_ns=50.0) == 0


def test_event_validation():
    with pytest.raises(ValueError):
        ev("X", 1.0)
    with pytest.raises(ValueError):
        ev("V", -1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        pc.ChannelParams(loss_db=-1)
    with pytest.raises(ValueError):
        pc.ChannelParams(dark_count_prob_per_window=2)
    with pytest.raises(ValueError):
        pc.ChannelParams(gate_width_ns=0)
    with pytest.raises(ValueError):
        pc.TimingParams(rep_rate_hz=0)


def test_lossless_detect_without_darks(rng):
    ch = pc.ChannelParams(loss_db=0.0, dark_count_prob_per_window=0.0, efficiency_mismatch=1.0,
                          reference_gate_ns=1e4, record_window_ns=1e4)
    for bit in (0, 1):
        events = pc.detect(True, ch, rng, bit)
        assert len(events) == 1 and events[0].detector_id == pc.DETECTORS[bit] and events[0].true_photon
    assert pc.detect(False, ch, rng) == []


def test_vectorised_click_rate(rng):
    ch = pc.ChannelParams(loss_db=10.0, dark_count_prob_per_window=0.0)
    bits = rng.integers(0, 2, 200_000)
    out = pc.simulate_clicks(bits, ch, rng)
    kept = sum(pc.resolve_click(e, ch) is not None for e in out.values())
    expected = 0.1 * 0.5 * (1 + ch.efficiency_mismatch)
    assert kept / len(bits) == pytest.approx(expected, rel=0.03)
    for i, events in out.items():
        if pc.resolve_click(events, ch) is not None:
            assert pc.DETECTORS.index(events[0].detector_id) == bits[i]


def test_dark_count_rate(rng):
    ch = pc.ChannelParams(dark_count_prob_per_window=0.01)
    out = pc.simulate_clicks(np.full(100_000, -1), ch, rng)
    n = sum(len(e) for e in out.values())
    expected = 2 * ch.dark_rate_per_ns * ch.record_window_ns * 100_000
    assert n == pytest.approx(expected, rel=0.1)
    assert all(not e.true_photon for es in out.values() for e in es)


def test_rate_model_reference_point():
    rate, per_use = pc.sifted_rate_model(pc.ChannelParams(), pc.TIMING_PRESETS["current"])
    assert 4.0 <= rate <= 9.0
    assert per_use == pytest.approx(1.29e-3, rel=0.1)


def test_rate_presets_ordered():
    ch = pc.ChannelParams()
    r = {k: pc.sifted_rate_model(ch, t)[0] for k, t in pc.TIMING_PRESETS.items()}
    assert r["current"] < r["passive"] < r["optimized"]


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 50), st.floats(0, 50))
def test_rate_falls_with_loss(l1, l2):
    lo, hi = sorted((l1, l2))
    t = pc.TIMING_PRESETS["current"]
    assert pc.sifted_rate_model(pc.ChannelParams(loss_db=hi), t)[0] <= pc.sifted_rate_model(pc.ChannelParams(loss_db=lo), t)[0] + 1e-12
