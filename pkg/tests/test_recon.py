import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memqkd import recon
from memqkd.peers.frames import Channel, MsgType
from memqkd.peers.transport import duplex_pair

KEY = bytes(32)
SID = bytes(range(16))


def noisy_pair(rng, n, e):
    a = rng.integers(0, 2, n).astype(np.uint8)
    return a, a ^ (rng.random(n) < e).astype(np.uint8)


@pytest.mark.parametrize("p, h", [(0.5, 1.0), (0.0, 0.0), (1.0, 0.0), (0.0786, 0.3972)])
def test_binary_entropy(p, h):
    assert recon.binary_entropy(p) == pytest.approx(h, abs=5e-5)


def test_binary_entropy_domain():
    with pytest.raises(ValueError):
        recon.binary_entropy(1.5)


@settings(max_examples=200)
@given(st.floats(0, 1))
def test_binary_entropy_symmetric(p):
    assert recon.binary_entropy(p) == pytest.approx(recon.binary_entropy(1 - p), abs=1e-12)


def test_block_size():
    assert recon.initial_block_size(0.083, 3080) == 9
    assert recon.initial_block_size(1e-9, 100) == 100
    assert recon.pass_permutations(10, 3, b"x")[0].tolist() == list(range(10))


def test_identical_keys_unchanged(rng):
    a = rng.integers(0, 2, 2000).astype(np.uint8)
    out, rep = recon.cascade_local(a, a.copy(), 0.05)
    assert np.array_equal(out, a)
    assert rep.errors_corrected == 0 and rep.f_r is None
    assert rep.passes == 4


def test_single_flip_leakage_bound(rng):
    n, e = 1024, 0.01
    a = rng.integers(0, 2, n).astype(np.uint8)
    b = a.copy()
    b[517] ^= 1
    out, rep = recon.cascade_local(a, b, e, seed=b"one")
    assert np.array_equal(out, a)
    assert rep.errors_corrected == 1
    k = recon.initial_block_size(e, n)
    assert rep.bits_leaked <= math.log2(k) + rep.passes * n / k


def test_fuzz_equality():
    rng = np.random.default_rng(2026)
    for t in range(1000):
        n = int(rng.integers(64, 4097))
        e = rng.uniform(0.001, 0.12)
        a, b = noisy_pair(rng, n, e)
        out, rep = recon.cascade_local(a, b, e, seed=t.to_bytes(4, "big"))
        assert np.array_equal(out, a), (n, e)
        assert rep.errors_corrected == int(np.count_nonzero(a != b))


@settings(max_examples=60, deadline=None)
@given(st.integers(8, 600), st.floats(0.0, 0.12), st.integers(0, 2**32 - 1))
def test_leakage_accounting_exact(n, e, seed):
    rng = np.random.default_rng(seed)
    a, b = noisy_pair(rng, n, e)
    est = max(e, 1e-3)
    leader = recon.CascadeLeader(a, est, seed=b"s")
    follower = recon.CascadeFollower(b, est, seed=b"s")
    out, rep = follower.run(leader.answer)
    assert rep.bits_leaked == leader.sent
    assert rep.errors_corrected == int(np.count_nonzero(out != b))
    if rep.errors_corrected:
        h = recon.binary_entropy(rep.errors_corrected / n)
        assert rep.f_r == pytest.approx(rep.bits_leaked / (n * h))


def test_f_r_falls_with_n():
    rng = np.random.default_rng(11)
    means = []
    for n in (2**10, 2**12, 2**14):
        fs = []
        for t in range(40):
            a, b = noisy_pair(rng, n, 0.083)
            _, rep = recon.cascade_local(a, b, 0.083, seed=t.to_bytes(4, "big"))
            fs.append(rep.f_r)
        means.append(np.mean(fs))
    assert means[0] > means[1] > means[2] > 1.0


def test_session_scale_efficiency():
    rng = np.random.default_rng(5)
    fs = []
    for t in range(20):
        a, b = noisy_pair(rng, 3080, 0.083)
        out, rep = recon.cascade_local(a, b, 0.083, seed=t.to_bytes(4, "big"))
        assert np.array_equal(out, a)
        fs.append(rep.f_r)
    assert np.mean(fs) <= 1.25


def test_entries_codec():
    entries = [(0, 5, 1), (3, (7 << 16) | 3, recon.REQUEST)]
    got, rest = recon.decode_entries(recon.encode_entries(entries) + b"tail")
    assert got == entries and rest == b"tail"
    with pytest.raises(ValueError):
        recon.decode_entries(recon.encode_entries(entries)[:-1])


def run_over_channel(a, b, e):
    ta, tb = duplex_pair(timeout=5)
    ca, cb = Channel(ta, KEY, SID), Channel(tb, KEY, SID)
    out = {}

    def leader():
        key, rep = recon.reconcile("leader", a, e, ca)
        out["ok_a"] = recon.verify_equality("leader", key, ca, rep)
        out["a"] = (key, rep)

    th = threading.Thread(target=leader)
    th.start()
    key, rep = recon.reconcile("follower", b, e, cb)
    out["ok_b"] = recon.verify_equality("follower", key, cb, rep)
    th.join()
    return out["a"], (key, rep), ca, cb, out


def test_transcript_leakage_audit(rng):
    a, b = noisy_pair(rng, 3080, 0.08)
    (ka, ra), (kb, rb), ca, cb, ok = run_over_channel(a, b, 0.08)
    assert np.array_equal(ka, kb) and np.array_equal(ka, a)
    assert ok["ok_a"] and ok["ok_b"]
    parity_bits = 0
    for direction, frame in ca.transcript:
        if direction == "out" and frame.msg_type == MsgType.RECON_PARITY:
            entries, _ = recon.decode_entries(frame.payload)
            assert all(p in (0, 1) for _, _, p in entries)
            parity_bits += len(entries)
    confirm = sum(8 * len(f.payload) for d, f in ca.transcript if d == "out" and f.msg_type == MsgType.KEY_CONFIRM)
    assert parity_bits == ra.bits_leaked == rb.bits_leaked
    assert confirm == ra.confirm_bits == 256
    assert ra.errors_corrected == rb.errors_corrected == int(np.count_nonzero(a != b))
    assert ra.passes == rb.passes and ra.f_r == pytest.approx(rb.f_r)


def test_verify_detects_difference(rng):
    a = rng.integers(0, 2, 500).astype(np.uint8)
    b = a.copy()
    b[3] ^= 1
    ta, tb = duplex_pair(timeout=5)
    ca, cb = Channel(ta, KEY, SID), Channel(tb, KEY, SID)
    res = {}
    th = threading.Thread(target=lambda: res.setdefault("a", recon.verify_equality("leader", a, ca)))
    th.start()
    rep = recon.ReconciliationReport(500, 0, 0)
    assert not recon.verify_equality("follower", b, cb, rep)
    th.join()
    assert not res["a"]
    assert rep.residual_error_detected and rep.confirm_bits == 256


def test_confirmation_tag():
    assert len(recon.confirmation_tag([1, 0, 1], 128)) == 16
    assert recon.confirmation_tag([1, 0], context=b"a") != recon.confirmation_tag([1, 0], context=b"b")
    with pytest.raises(ValueError):
        recon.confirmation_tag([1], 12)


def test_role_checked():
    with pytest.raises(ValueError):
        recon.reconcile("umpire", [0, 1], 0.1, None, seed=b"")
