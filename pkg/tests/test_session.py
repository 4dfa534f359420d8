import threading

import numpy as np
import pytest

from memqkd.peers import session as ss
from memqkd.peers.frames import AbortedQber, AuthFailure, MsgType, ProtocolViolation
from memqkd.peers.link import LinkParams, QuantumLink
from memqkd.physchan import ChannelParams


def clean_config(**kw):
    ch = ChannelParams(loss_db=0.0, dark_count_prob_per_window=0.0)
    base = dict(channel=ch, visibility_z=1.0, visibility_y=1.0, max_rounds=1000, batch_size=1000,
                target_sifted_bits=3080)
    base.update(kw)
    return ss.SessionConfig(**base)


@pytest.fixture(scope="module")
def default_run():
    return ss.run_session(ss.SessionConfig(seed=0))


def test_noiseless_link():
    res = ss.run_session(clean_config())
    assert res.qber_total == 0.0
    assert res.keys_match and res.n_key > 0
    assert res.alice.report.errors_corrected == 0
    assert res.budget.f_r == 1.0
    assert res.alice.rounds == 1000


def test_injected_noise_aborts():
    with pytest.raises(AbortedQber) as info:
        ss.run_session(clean_config(inject_error_rate=0.2, max_rounds=10_000, batch_size=10_000))
    assert info.value.code == 2
    part = info.value.session
    assert part.alice.status == part.bob.status == "ABORTED_QBER"
    assert part.alice.final_key is None


def test_tampering_detected():
    def flip(data):
        d = bytearray(data)
        d[-1] ^= 0x80
        return bytes(d)

    with pytest.raises(AuthFailure) as info:
        ss.run_session(clean_config(), tamper_a=flip)
    assert info.value.code == 3


def alice_in_thread(cfg, transport, psk):
    out = {}

    def run():
        try:
            ss.run_peer("alice", cfg, transport, np.random.default_rng(0), psk)
        except Exception as exc:
            out["error"] = exc

    th = threading.Thread(target=run)
    th.start()
    return th, out


def test_wrong_psk_detected():
    ta, tb = ss.duplex_pair(timeout=5)
    th, out = alice_in_thread(clean_config(), ta, b"a" * 32)
    with pytest.raises(AuthFailure):
        ss.run_peer("bob", clean_config(), tb, np.random.default_rng(1), b"b" * 32)
    th.join()
    assert "error" in out


def test_config_mismatch_detected():
    ta, tb = ss.duplex_pair(timeout=5)
    th, out = alice_in_thread(clean_config(), ta, b"k" * 32)
    with pytest.raises(ProtocolViolation):
        ss.run_peer("bob", clean_config(seed=9), tb, np.random.default_rng(1), b"k" * 32)
    th.join()
    assert isinstance(out["error"], ProtocolViolation)


def test_transcript_deterministic():
    def frames():
        res = ss.run_session(clean_config(max_rounds=2000))
        return [(d, f.encode()) for d, f in res.transcript]

    assert frames() == frames()


def test_secure_mode_differs_but_agrees():
    a = ss.run_session(clean_config(), mode="secure")
    b = ss.run_session(clean_config(), mode="secure")
    assert a.keys_match and b.keys_match
    assert a.alice.session_id != b.alice.session_id


def test_basis_follows_detection_report(default_run):
    order = [(d, f.msg_type) for d, f in default_run.transcript]
    seen_report = False
    for d, m in order:
        if m == MsgType.ROUND_BATCH:
            seen_report = False
        if m == MsgType.DETECT_REPORT:
            seen_report = True
        if m == MsgType.BASIS_REVEAL:
            assert seen_report
    # Bob reveals first, then Alice
    reveals = [d for d, m in order if m == MsgType.BASIS_REVEAL]
    assert reveals[:2] == ["in", "out"]


def test_default_session(default_run):
    r = default_run
    assert r.keys_match
    assert r.alice.sifted.n == 3080
    assert 0.065 <= r.qber_total <= 0.10
    assert r.alice.report.f_r <= 1.25
    assert r.n_key >= 256
    assert r.budget.n_key == r.n_key <= min(r.budget.n_sec, r.certificate.n_rand)
    assert np.array_equal(r.alice.reconciled, r.bob.reconciled)


def test_sifted_indices_replay(default_run):
    a, b = default_run.alice.sifted, default_run.bob.sifted
    np.testing.assert_array_equal(a.round_indices, b.round_indices)
    np.testing.assert_array_equal(a.bases, b.bases)
    # Bob's bits are the photon outcomes the link produced in those rounds.
    cfg = ss.SessionConfig(seed=0)
    link = QuantumLink(0, cfg.link_params())
    batch = cfg.batch_size
    for pos in (0, 100, 1000):
        r = int(b.round_indices[pos])
        pb = link.batch(r // batch, batch)
        assert pb.bob_bits[r % batch] == b.bits[pos]


def test_report_fields(default_run):
    rep = default_run.report()
    for k in ("status", "session_id", "n_sifted", "qber_sample", "qber_key", "reconciliation", "budget",
              "certificate", "n_key", "keys_match", "frames"):
        assert k in rep
    assert rep["status"] == "OK" and rep["n_sifted"] == 3080


def test_timeout():
    cfg = ss.SessionConfig(timeout_s=1e-9, batch_size=20_000)
    with pytest.raises(ss.SessionTimeout) as info:
        ss.run_session(cfg)
    assert info.value.code == 6


def test_sift_records():
    a = [ss.RoundRecord(0, 0, 1), ss.RoundRecord(1, 1, 0), ss.RoundRecord(2, 0, 1, detected=False),
         ss.RoundRecord(3, 1, 1)]
    b = [ss.RoundRecord(0, 0, 1), ss.RoundRecord(1, 0, 0), ss.RoundRecord(2, 0, 1),
         ss.RoundRecord(3, 1, 0, discarded_double_click=True)]
    ka, kb = ss.sift(a, b)
    assert ka.round_indices.tolist() == [0] and kb.bits.tolist() == [1]
    with pytest.raises(ValueError):
        ss.sift(a, b[:2])


def test_estimate_qber(rng):
    bits = rng.integers(0, 2, 1000).astype(np.uint8)
    bases = rng.integers(0, 2, 1000).astype(np.uint8)
    a = ss.SiftedKey(bits, bases, np.arange(1000))
    b = ss.SiftedKey(bits ^ (np.arange(1000) % 10 == 0), bases, np.arange(1000))
    e_z, e_y, e, idx = ss.estimate_qber(a, b, 1.0, rng)
    assert e == pytest.approx(0.1) and len(idx) == 1000


def test_link_statistics():
    p = LinkParams(ChannelParams(loss_db=0.0, dark_count_prob_per_window=0.0), 0.8, 0.7)
    link = QuantumLink(3, p)
    idx, y = link.bob_measure(0, 200_000)
    for basis, v in ((0, 0.8), (1, 0.7)):
        ab = np.full(len(idx), basis)
        x = link.alice_measure(0, 200_000, idx, ab, ab)
        assert np.mean(x != y) == pytest.approx((1 - v) / 2, abs=0.005)


def test_config_validation():
    with pytest.raises(ValueError):
        ss.SessionConfig(target_sifted_bits=0)
    with pytest.raises(ValueError):
        ss.SessionConfig(visibility_z=1.5)
    assert ss.SessionConfig().digest() == ss.SessionConfig(timeout_s=5.0).digest()
    assert ss.SessionConfig().digest() != ss.SessionConfig(seed=1).digest()


def test_codecs_roundtrip(rng):
    idx = rng.integers(0, 2**31, 77)
    bits = rng.integers(0, 2, 77).astype(np.uint8)
    got, off = ss._unpack_indices(ss._pack_indices(idx) + ss._pack_bits(bits))
    np.testing.assert_array_equal(got, idx)
    np.testing.assert_array_equal(ss._unpack_bits(ss._pack_indices(idx) + ss._pack_bits(bits), off)[0], bits)
    with pytest.raises(ProtocolViolation):
        ss._unpack_bits(ss._pack_bits(bits)[:-2])
