import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memqkd import memqubit as mq


def test_budget_contrasts():
    assert mq.MEASURED_BUDGET.static_contrast("z") == pytest.approx(0.876977, abs=1e-6)
    assert mq.MEASURED_BUDGET.static_contrast("y") == pytest.approx(0.809880, abs=1e-6)
    assert mq.mean_qber(0.0, mq.MEASURED_BUDGET, mq.CLOCK) == pytest.approx(0.07829, abs=1e-5)
    with pytest.raises(ValueError):
        mq.MEASURED_BUDGET.static_contrast("x")


def test_budget_validation():
    with pytest.raises(ValueError):
        mq.ContrastBudget(excitation=1.5)
    with pytest.raises(ValueError):
        mq.CoherenceModel(0.0)


def test_frozen_coherence_times():
    assert mq.calibrate_coherence(mq.MEASURED_BUDGET, 1200.0, 0.0992) == pytest.approx(mq.CLOCK_TAU_US, rel=1e-6)
    assert mq.coherence_from_reference_loss(0.007) == pytest.approx(mq.UPDOWN_TAU_US, rel=1e-6)


def test_clock_storage_and_distance():
    t = mq.max_storage_time(mq.MEASURED_BUDGET, mq.CLOCK, 0.0992)
    assert t == pytest.approx(1200.0, abs=0.1)
    assert mq.link_distance(1200.0) == pytest.approx(359.75, abs=0.01)


def test_zeeman_qubit_is_shorter():
    assert mq.max_storage_time(mq.MEASURED_BUDGET, mq.UPDOWN, 0.0992) < mq.max_storage_time(mq.MEASURED_BUDGET, mq.CLOCK, 0.0992)


def test_z_basis_does_not_dephase():
    b, m = mq.MEASURED_BUDGET, mq.UPDOWN
    assert mq.contrast_at(5000.0, b, m, "z") == b.static_contrast("z")
    assert mq.contrast_at(mq.REFERENCE_STORAGE_US, b, m, "y") == pytest.approx(b.static_contrast("y"))


@settings(max_examples=200)
@given(st.floats(0, 1e5), st.floats(0, 1e5), st.floats(10, 1e5))
def test_qber_monotone_in_storage(t1, t2, tau):
    lo, hi = sorted((t1, t2))
    m = mq.CoherenceModel(tau)
    q_lo, q_hi = mq.mean_qber(lo, mq.MEASURED_BUDGET, m), mq.mean_qber(hi, mq.MEASURED_BUDGET, m)
    assert q_lo <= q_hi + 1e-15
    assert q_hi <= 0.5


@settings(max_examples=50)
@given(st.floats(100, 1e5), st.floats(100, 1e5))
def test_storage_grows_with_coherence(tau1, tau2):
    lo, hi = sorted((tau1, tau2))
    t_lo = mq.max_storage_time(mq.MEASURED_BUDGET, mq.CoherenceModel(lo), 0.0992)
    t_hi = mq.max_storage_time(mq.MEASURED_BUDGET, mq.CoherenceModel(hi), 0.0992)
    assert t_lo <= t_hi + 0.02


def test_threshold_edge_cases():
    with pytest.raises(ValueError):
        mq.max_storage_time(mq.MEASURED_BUDGET, mq.CLOCK, 0.05)
    assert math.isinf(mq.max_storage_time(mq.MEASURED_BUDGET, mq.CLOCK, 0.4))


def test_qber_from_contrast():
    assert mq.qber_from_contrast(1.0) == 0.0
    assert mq.qber_from_contrast(0.0) == 0.5
    with pytest.raises(ValueError):
        mq.qber_from_contrast(1.2)


def test_storage_csv(tmp_path):
    rows = mq.storage_table([0.0, 1200.0])
    path = tmp_path / "s.csv"
    mq.write_storage_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "storage_us,qber_updown,qber_clock,distance_km"
    assert len(lines) == 3
    assert rows[1]["qber_clock"] == pytest.approx(0.0992, abs=1e-6)
