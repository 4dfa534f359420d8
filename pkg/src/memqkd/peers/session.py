"""Alice and Bob state machines of the entanglement-based key exchange.

Message flow (Alice initiates; every frame is authenticated):

    HELLO <->
    repeat:  ROUND_BATCH -> DETECT_REPORT <- BASIS_REVEAL <- BASIS_REVEAL -> SIFT_ANNOUNCE ->
    QBER_SAMPLE -> QBER_RESULT <-          (abort if e >= threshold)
    RECON_REPLY <-> RECON_PARITY           (Cascade, Bob asks, Alice answers)
    QBER_RESULT <-                         (whole-key error counts)
    KEY_CONFIRM <->                        (hash of the reconciled key)
    PA_SEED -> DONE <->

Alice holds the memory qubit and reads it out only for rounds that Bob
reports as heralded.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..certify import RandomnessCertificate, certify, simulate_chsh_counts
from ..pamp import KeyBudget, decode_pa_seed, encode_pa_seed, subset_parity_hash
from ..physchan import ChannelParams, TimingParams
from ..qstate import TwoQubitState
from ..recon import ReconciliationReport, reconcile, verify_equality
from .frames import AbortedQber, Channel, ConfirmMismatch, MsgType, ProtocolError, ProtocolViolation
from .link import BELL_STREAM, DEFAULT_VY, DEFAULT_VZ, LinkParams, QuantumLink, stream_rng
from .transport import duplex_pair

U32 = struct.Struct(">I")
BATCH = struct.Struct(">II")
SIFT = struct.Struct(">IB")
QBER = struct.Struct(">BIIII")
LABELS = np.array(["Z", "Y"])

SIFT_MORE, SIFT_DONE, SIFT_TIMEOUT = 0, 1, 2


class SessionTimeout(ProtocolError):
    code = 6
    kind = "TIMEOUT"


@dataclass
class SessionConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    timing: TimingParams = field(default_factory=TimingParams)
    visibility_z: float = DEFAULT_VZ
    visibility_y: float = DEFAULT_VY
    bell_visibility: float = 0.802
    bell_rounds_per_setting: int = 100_000
    delta: float = 0.01
    q: float = 0.25
    target_sifted_bits: int = 3080
    max_rounds: int | None = None
    batch_size: int = 500_000
    disclose_fraction: float = 0.1
    abort_qber: float = 0.15
    n_passes: int = 4
    eps_sec: float = 0.015
    eps_ec: float = 0.015
    log_base: str = "ln"
    length_policy: str = "asymptotic"
    confirm_bits: int = 256
    inject_error_rate: float = 0.0
    seed: int = 0
    timeout_s: float | None = None

    def __post_init__(self):
        if self.target_sifted_bits <= 0:
            raise ValueError("target_sifted_bits must be positive")
        if not 0.0 < self.disclose_fraction < 1.0:
            raise ValueError("disclose_fraction must lie in (0, 1)")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        self.link_params()

    def link_params(self) -> LinkParams:
        return LinkParams(self.channel, self.visibility_z, self.visibility_y, self.inject_error_rate)

    def digest(self) -> bytes:
        """Fingerprint both peers compare in HELLO; excludes the local timeout."""
        d = asdict(self)
        d.pop("timeout_s")
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).digest()


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    basis: int
    outcome: int
    detected: bool = True
    discarded_double_click: bool = False


@dataclass
class SiftedKey:
    bits: np.ndarray
    bases: np.ndarray
    round_indices: np.ndarray

    @classmethod
    def empty(cls) -> "SiftedKey":
        z = np.zeros(0, dtype=np.uint8)
        return cls(z, z.copy(), np.zeros(0, dtype=np.int64))

    @property
    def n(self) -> int:
        return len(self.bits)

    @property
    def basis_labels(self) -> list[str]:
        return LABELS[self.bases].tolist()

    def count(self, basis: int) -> int:
        return int(np.count_nonzero(self.bases == basis))

    def extend(self, other: "SiftedKey") -> "SiftedKey":
        return SiftedKey(np.concatenate([self.bits, other.bits]), np.concatenate([self.bases, other.bases]),
                         np.concatenate([self.round_indices, other.round_indices]))

    def take(self, n: int) -> "SiftedKey":
        return SiftedKey(self.bits[:n], self.bases[:n], self.round_indices[:n])

    def without(self, indices) -> "SiftedKey":
        keep = np.ones(self.n, dtype=bool)
        keep[np.asarray(indices, dtype=np.int64)] = False
        return SiftedKey(self.bits[keep], self.bases[keep], self.round_indices[keep])


def choose_basis(rng: np.random.Generator, size=None):
    """Fair basis bit(s): 0 selects Z, 1 selects Y."""
    out = rng.integers(0, 2, size)
    return int(out) if size is None else out.astype(np.uint8)


def party_rng(mode: str, seed: int | None = None, role: str = "") -> np.random.Generator:
    """``replay``: reproducible from ``seed``; ``secure``: seeded from OS entropy."""
    if mode == "replay":
        tag = int.from_bytes(hashlib.sha256(role.encode()).digest()[:4], "big")
        return np.random.default_rng(np.random.SeedSequence(seed or 0, spawn_key=(tag,)))
    if mode == "secure":
        return np.random.default_rng()
    raise ValueError(f"unknown randomness mode {mode!r}")


def sift(records_a, records_b) -> tuple[SiftedKey, SiftedKey]:
    if len(records_a) != len(records_b):
        raise ValueError("round records differ in length")
    keep = []
    for ra, rb in zip(records_a, records_b):
        if ra.round_index != rb.round_index:
            raise ValueError("round records are not aligned")
        if ra.detected and rb.detected and not (ra.discarded_double_click or rb.discarded_double_click) \
                and ra.basis == rb.basis:
            keep.append((ra, rb))
    out = []
    for side in (0, 1):
        recs = [pair[side] for pair in keep]
        out.append(SiftedKey(np.array([r.outcome for r in recs], dtype=np.uint8),
                             np.array([r.basis for r in recs], dtype=np.uint8),
                             np.array([r.round_index for r in recs], dtype=np.int64)))
    return out[0], out[1]


def _rates(bits_a, bits_b, bases):
    err = bits_a != bits_b
    out = []
    for basis in (0, 1):
        sel = bases == basis
        out.append(float(err[sel].mean()) if sel.any() else math.nan)
    out.append(float(err.mean()))
    return out


def estimate_qber(key_a: SiftedKey, key_b: SiftedKey, disclose_fraction: float, rng: np.random.Generator):
    """Publicly compare a random subset; returns (e_z, e_y, e, disclosed_indices)."""
    if key_a.n == 0 or key_a.n != key_b.n:
        raise ValueError("keys must be non-empty and of equal length")
    if not 0.0 < disclose_fraction <= 1.0:
        raise ValueError("disclose_fraction must lie in (0, 1]")
    m = max(1, int(math.floor(disclose_fraction * key_a.n)))
    idx = np.sort(rng.choice(key_a.n, size=m, replace=False))
    e_z, e_y, e = _rates(key_a.bits[idx], key_b.bits[idx], key_a.bases[idx])
    return e_z, e_y, e, idx


# Payload codecs ------------------------------------------------------------

def _pack_indices(idx) -> bytes:
    idx = np.asarray(idx, dtype=">u4")
    return U32.pack(len(idx)) + idx.tobytes()


def _unpack_indices(payload: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    (n,) = U32.unpack_from(payload, offset)
    start = offset + U32.size
    end = start + 4 * n
    if len(payload) < end:
        raise ProtocolViolation("truncated index list")
    return np.frombuffer(payload[start:end], dtype=">u4").astype(np.int64), end


def _pack_bits(bits) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    return U32.pack(len(bits)) + np.packbits(bits).tobytes()


def _unpack_bits(payload: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    (n,) = U32.unpack_from(payload, offset)
    start = offset + U32.size
    end = start + (n + 7) // 8
    if len(payload) < end:
        raise ProtocolViolation("truncated bit string")
    return np.unpackbits(np.frombuffer(payload[start:end], dtype=np.uint8))[:n], end


# Peers ---------------------------------------------------------------------

@dataclass
class PeerResult:
    role: str
    sifted: SiftedKey
    rounds: int
    qber_sample: tuple[float, float, float] | None = None
    qber_key: tuple[float, float, float] | None = None
    reconciled: np.ndarray | None = None
    final_key: np.ndarray | None = None
    report: ReconciliationReport | None = None
    certificate: RandomnessCertificate | None = None
    budget: KeyBudget | None = None
    transcript: list = field(default_factory=list)
    status: str = "OK"
    session_id: bytes = b""


class _Peer:
    role = ""

    def __init__(self, config: SessionConfig, channel: Channel, rng: np.random.Generator):
        self.cfg = config
        self.ch = channel
        self.rng = rng
        self.link = QuantumLink(config.seed, config.link_params())
        self.result = PeerResult(self.role, SiftedKey.empty(), 0, transcript=channel.transcript)

    def certificate(self, n_r: int) -> RandomnessCertificate:
        """Bell characterization of the link, regenerated from the physics seed."""
        counts = simulate_chsh_counts(TwoQubitState(self.cfg.bell_visibility), self.cfg.bell_rounds_per_setting,
                                      stream_rng(self.cfg.seed, BELL_STREAM))
        return certify(counts, self.cfg.delta, n_r, self.cfg.q)

    def budget(self, key: SiftedKey, counts, report: ReconciliationReport, n_rand: int) -> KeyBudget:
        n_z_all, m_z, n_y_all, m_y = counts
        e_z = m_z / n_z_all if n_z_all else 0.0
        e_y = m_y / n_y_all if n_y_all else 0.0
        f_r = max(report.f_r, 1.0) if report.f_r is not None else 1.0
        b = KeyBudget(key.count(0), key.count(1), min(e_z, 0.4999), min(e_y, 0.4999), f_r,
                      self.cfg.eps_sec, self.cfg.eps_ec, n_rand, self.cfg.log_base, self.cfg.length_policy)
        return b

    def finish(self, key: SiftedKey, reconciled: np.ndarray, report, counts, seed: bytes, out_len: int):
        r = self.result
        cert = self.certificate(len(reconciled))
        budget = self.budget(key, counts, report, cert.n_rand)
        if out_len != budget.n_key:
            raise ProtocolViolation(f"peer wants {out_len} key bits, local budget allows {budget.n_key}")
        r.certificate = cert
        r.budget = budget
        r.final_key = subset_parity_hash(reconciled, seed, out_len)
        n_all_z, m_z, n_all_y, m_y = counts
        r.qber_key = (m_z / n_all_z if n_all_z else math.nan, m_y / n_all_y if n_all_y else math.nan,
                      (m_z + m_y) / max(n_all_z + n_all_y, 1))


class Alice(_Peer):
    role = "alice"

    def run(self) -> PeerResult:
        cfg, ch, r = self.cfg, self.ch, self.result
        r.session_id = ch.session_id
        ch.send(MsgType.HELLO, cfg.digest())
        if ch.expect(MsgType.HELLO) != cfg.digest():
            raise ProtocolViolation("peers run different configurations")
        key = SiftedKey.empty()
        start = time.monotonic()
        j = 0
        while True:
            n = cfg.batch_size
            if cfg.max_rounds is not None:
                n = min(n, cfg.max_rounds - r.rounds)
            ch.send(MsgType.ROUND_BATCH, BATCH.pack(j, n))
            det, _ = _unpack_indices(ch.expect(MsgType.DETECT_REPORT))
            b, _ = _unpack_bits(ch.expect(MsgType.BASIS_REVEAL))
            a = choose_basis(self.rng, len(det))
            ch.send(MsgType.BASIS_REVEAL, _pack_bits(a))
            if len(b) != len(det):
                raise ProtocolViolation("basis reveal does not match the detection report")
            x = self.link.alice_measure(j, n, det, a, b)
            match = a == b
            key = key.extend(SiftedKey(x[match], a[match], det[match] + r.rounds))
            r.rounds += n
            j += 1
            if key.n >= cfg.target_sifted_bits:
                flag = SIFT_DONE
            elif cfg.max_rounds is not None and r.rounds >= cfg.max_rounds:
                flag = SIFT_DONE
            elif cfg.timeout_s is not None and time.monotonic() - start > cfg.timeout_s:
                flag = SIFT_TIMEOUT
            else:
                flag = SIFT_MORE
            ch.send(MsgType.SIFT_ANNOUNCE, SIFT.pack(key.n, flag))
            if flag == SIFT_TIMEOUT:
                r.sifted = key
                raise SessionTimeout(f"time budget exhausted after {r.rounds} rounds with {key.n} sifted bits")
            if flag == SIFT_DONE:
                break
        key = key.take(cfg.target_sifted_bits)
        r.sifted = key
        if key.n < 2:
            raise ProtocolViolation("round budget produced no usable sifted key")

        # Parameter estimation on a disclosed sample.
        m = max(1, int(math.floor(cfg.disclose_fraction * key.n)))
        idx = np.sort(self.rng.choice(key.n, size=m, replace=False))
        ch.send(MsgType.QBER_SAMPLE, _pack_indices(idx) + _pack_bits(key.bits[idx]))
        _, n_z, m_z, n_y, m_y = QBER.unpack(ch.expect(MsgType.QBER_RESULT))
        e = (m_z + m_y) / max(n_z + n_y, 1)
        r.qber_sample = (m_z / n_z if n_z else math.nan, m_y / n_y if n_y else math.nan, e)
        if e >= cfg.abort_qber:
            err = AbortedQber(f"estimated QBER {e:.4f} >= {cfg.abort_qber}")
            ch.abort(err)
            raise err
        sample_counts = (n_z, n_y)
        rest = key.without(idx)

        reconciled, report = reconcile("leader", rest.bits, _e_estimate(e), ch, cfg.n_passes)
        _, n_z_all, m_z_all, n_y_all, m_y_all = QBER.unpack(ch.expect(MsgType.QBER_RESULT))
        if (n_z_all, n_y_all) != (sample_counts[0] + rest.count(0), sample_counts[1] + rest.count(1)):
            raise ProtocolViolation("whole-key error counts do not cover the sifted key")
        r.reconciled, r.report = reconciled, report
        if not verify_equality("leader", reconciled, ch, report, cfg.confirm_bits):
            raise ConfirmMismatch("reconciled keys differ")

        counts = (n_z_all, m_z_all, n_y_all, m_y_all)
        cert = self.certificate(len(reconciled))
        out_len = self.budget(rest, counts, report, cert.n_rand).n_key
        seed = self.rng.bytes(32)
        ch.send(MsgType.PA_SEED, encode_pa_seed(seed, out_len))
        self.finish(rest, reconciled, report, counts, seed, out_len)
        ch.send(MsgType.DONE, hashlib.sha256(np.packbits(r.final_key).tobytes()).digest()[:8])
        ch.expect(MsgType.DONE)
        return r


class Bob(_Peer):
    role = "bob"

    def run(self) -> PeerResult:
        cfg, ch, r = self.cfg, self.ch, self.result
        if ch.expect(MsgType.HELLO) != cfg.digest():
            ch.abort(ProtocolViolation("configuration mismatch"))
            raise ProtocolViolation("peers run different configurations")
        r.session_id = ch.session_id
        ch.send(MsgType.HELLO, cfg.digest())
        key = SiftedKey.empty()
        while True:
            j, n = BATCH.unpack(ch.expect(MsgType.ROUND_BATCH))
            b_all = choose_basis(self.rng, n)
            det, y = self.link.bob_measure(j, n)
            ch.send(MsgType.DETECT_REPORT, _pack_indices(det))
            b = b_all[det]
            ch.send(MsgType.BASIS_REVEAL, _pack_bits(b))
            a, _ = _unpack_bits(ch.expect(MsgType.BASIS_REVEAL))
            if len(a) != len(det):
                raise ProtocolViolation("basis reveal does not match the detection report")
            match = a == b
            key = key.extend(SiftedKey(y[match], b[match], det[match] + r.rounds))
            r.rounds += n
            count, flag = SIFT.unpack(ch.expect(MsgType.SIFT_ANNOUNCE))
            if count != key.n:
                raise ProtocolViolation(f"sift mismatch: peer has {count} bits, we have {key.n}")
            if flag == SIFT_TIMEOUT:
                r.sifted = key
                raise SessionTimeout(f"peer stopped on its time budget after {r.rounds} rounds")
            if flag == SIFT_DONE:
                break
        key = key.take(cfg.target_sifted_bits)
        r.sifted = key
        if key.n < 2:
            raise ProtocolViolation("round budget produced no usable sifted key")

        payload = ch.expect(MsgType.QBER_SAMPLE)
        idx, off = _unpack_indices(payload)
        alice_bits, _ = _unpack_bits(payload, off)
        if len(idx) != len(alice_bits) or (len(idx) and idx.max() >= key.n):
            raise ProtocolViolation("malformed QBER sample")
        err = alice_bits != key.bits[idx]
        bases = key.bases[idx]
        n_z, n_y = int(np.count_nonzero(bases == 0)), int(np.count_nonzero(bases == 1))
        m_z, m_y = int(np.count_nonzero(err & (bases == 0))), int(np.count_nonzero(err & (bases == 1)))
        ch.send(MsgType.QBER_RESULT, QBER.pack(0, n_z, m_z, n_y, m_y))
        e = (m_z + m_y) / max(n_z + n_y, 1)
        r.qber_sample = (m_z / n_z if n_z else math.nan, m_y / n_y if n_y else math.nan, e)
        if e >= cfg.abort_qber:
            ch.recv(MsgType.ABORT)
            raise AbortedQber(f"estimated QBER {e:.4f} >= {cfg.abort_qber}")

        rest = key.without(idx)
        reconciled, report = reconcile("follower", rest.bits, _e_estimate(e), ch, cfg.n_passes)
        flipped = reconciled != rest.bits
        m_z_all = m_z + int(np.count_nonzero(flipped & (rest.bases == 0)))
        m_y_all = m_y + int(np.count_nonzero(flipped & (rest.bases == 1)))
        counts = (n_z + rest.count(0), m_z_all, n_y + rest.count(1), m_y_all)
        ch.send(MsgType.QBER_RESULT, QBER.pack(1, *counts))
        r.reconciled, r.report = reconciled, report
        if not verify_equality("follower", reconciled, ch, report, cfg.confirm_bits):
            raise ConfirmMismatch("reconciled keys differ")

        seed, out_len = decode_pa_seed(ch.expect(MsgType.PA_SEED))
        self.finish(rest, reconciled, report, counts, seed, out_len)
        ch.expect(MsgType.DONE)
        ch.send(MsgType.DONE, hashlib.sha256(np.packbits(r.final_key).tobytes()).digest()[:8])
        return r


def _e_estimate(e: float) -> float:
    """Cascade's block-size input; kept inside its working range."""
    return min(max(e, 1e-3), 0.15)


# Orchestration -------------------------------------------------------------

def run_peer(role: str, config: SessionConfig, transport, rng: np.random.Generator, psk: bytes,
             tamper=None) -> PeerResult:
    """Run one side; aborts are announced to the peer before re-raising."""
    if role == "alice":
        sid = bytes(rng.bytes(16))
        peer = Alice(config, Channel(transport, psk, sid, tamper), rng)
    elif role == "bob":
        peer = Bob(config, Channel(transport, psk, None, tamper), rng)
    else:
        raise ValueError(f"unknown role {role!r}")
    try:
        return peer.run()
    except ProtocolError as exc:
        peer.result.status = exc.kind
        exc.result = peer.result
        if not isinstance(exc, AbortedQber):
            peer.ch.abort(exc)
        raise
    finally:
        try:
            transport.close()
        except Exception:
            pass


@dataclass
class SessionResult:
    alice: PeerResult
    bob: PeerResult
    elapsed_s: float = 0.0

    @property
    def sifted(self) -> dict:
        return {"alice": self.alice.sifted, "bob": self.bob.sifted}

    @property
    def qber_z(self) -> float:
        return _pick(self.alice, 0)

    @property
    def qber_y(self) -> float:
        return _pick(self.alice, 1)

    @property
    def qber_total(self) -> float:
        return _pick(self.alice, 2)

    @property
    def transcript(self) -> list:
        return self.alice.transcript

    @property
    def certificate(self) -> RandomnessCertificate | None:
        return self.alice.certificate

    @property
    def budget(self) -> KeyBudget | None:
        return self.alice.budget

    @property
    def keys_match(self) -> bool:
        a, b = self.alice.final_key, self.bob.final_key
        return a is not None and b is not None and np.array_equal(a, b)

    @property
    def n_key(self) -> int:
        return 0 if self.alice.final_key is None else len(self.alice.final_key)

    def report(self) -> dict:
        a = self.alice
        rep = a.report
        return {
            "status": a.status,
            "session_id": a.session_id.hex(),
            "rounds": a.rounds,
            "n_sifted": a.sifted.n,
            "qber_sample": None if a.qber_sample is None else dict(zip(("z", "y", "total"), a.qber_sample)),
            "qber_key": None if a.qber_key is None else dict(zip(("z", "y", "total"), a.qber_key)),
            "reconciliation": None if rep is None else asdict(rep),
            "budget": None if a.budget is None else a.budget.to_json(),
            "certificate": None if a.certificate is None else a.certificate.to_json(),
            "n_key": self.n_key,
            "keys_match": self.keys_match,
            "frames": len(a.transcript),
            "elapsed_s": self.elapsed_s,
        }


def _pick(peer: PeerResult, i: int) -> float:
    """Whole-key error rate once reconciliation has run, else the sample estimate."""
    src = peer.qber_key or peer.qber_sample
    return math.nan if src is None else src[i]


def run_session(config: SessionConfig, transport=None, rng_a=None, rng_b=None, psk: bytes | None = None,
                tamper_a=None, tamper_b=None, mode: str = "replay") -> SessionResult:
    """Both peers concurrently over an in-memory duplex pipe.

    Raises the failing peer's :class:`ProtocolError`; its ``session`` attribute
    holds the partial :class:`SessionResult`.
    """
    ta, tb = transport if transport is not None else duplex_pair()
    rng_a = rng_a if rng_a is not None else party_rng(mode, config.seed, "alice")
    rng_b = rng_b if rng_b is not None else party_rng(mode, config.seed, "bob")
    psk = psk if psk is not None else hashlib.sha256(b"memqkd-demo-psk").digest()
    out: dict = {}

    def alice():
        try:
            out["alice"] = run_peer("alice", config, ta, rng_a, psk, tamper_a)
        except BaseException as exc:  # surfaced in the calling thread
            out["alice_error"] = exc

    t0 = time.monotonic()
    th = threading.Thread(target=alice, name="alice", daemon=True)
    th.start()
    try:
        out["bob"] = run_peer("bob", config, tb, rng_b, psk, tamper_b)
    except BaseException as exc:
        out["bob_error"] = exc
    th.join()
    elapsed = time.monotonic() - t0
    errors = [out.get("alice_error"), out.get("bob_error")]
    if any(errors):
        err = _primary_error(*errors)
        pa = out.get("alice") or getattr(out.get("alice_error"), "result", None)
        pb = out.get("bob") or getattr(out.get("bob_error"), "result", None)
        if pa is not None and pb is not None:
            err.session = SessionResult(pa, pb, elapsed)
        raise err
    return SessionResult(out["alice"], out["bob"], elapsed)


def _primary_error(ea, eb) -> BaseException:
    """Pick the error that explains the failure: a local cause beats an echoed abort."""
    cands = [e for e in (ea, eb) if e is not None]
    echoed = lambda e: str(e).startswith(("peer aborted", "peer stopped"))
    for e in cands:
        if isinstance(e, ProtocolError) and not echoed(e):
            return e
    for e in cands:
        if isinstance(e, ProtocolError):
            return e
    return cands[0]
