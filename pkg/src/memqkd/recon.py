"""Cascade information reconciliation with exact leakage accounting.

The follower (Bob) drives the protocol: it asks the leader (Alice) for the
parities of index ranges and flips its own bits.  A range is addressed by
(pass, node) where ``node = block << 16 | h`` and ``h`` is a heap index
inside the block (1 is the whole block, 2h / 2h+1 its halves).  Every
parity the leader sends counts as one leaked bit; parities implied by a
parent and its sibling are never requested.

Wire format of RECON_REPLY (requests) and RECON_PARITY (answers):

    count(4, BE) | count * [pass(1) | node(4, BE) | parity(1)]

Requests carry parity 0xFF.  A request with count 0 ends reconciliation and
is followed by the follower's number of corrected bits (4 bytes, BE) and
the number of passes it ran (1 byte).
"""

from __future__ import annotations

import hashlib
import hmac
import math
import struct
from dataclasses import dataclass

import numpy as np

from .peers.frames import ConfirmMismatch, MsgType

NODE_BITS = 16
MAX_BLOCK = 1 << (NODE_BITS - 1)
ENTRY = struct.Struct(">BIB")
COUNT = struct.Struct(">I")
REQUEST = 0xFF
MIN_BLOCKS = 8


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def initial_block_size(e_estimate: float, n: int) -> int:
    k = math.ceil(0.73 / e_estimate) if e_estimate > 0 else n
    return max(1, min(k, n, MAX_BLOCK))


def pass_permutations(n: int, n_passes: int, seed: bytes) -> list[np.ndarray]:
    """Public shuffles; the first pass keeps the natural order."""
    rng = np.random.default_rng(int.from_bytes(hashlib.sha256(b"cascade" + seed).digest(), "big"))
    perms = [np.arange(n)]
    perms += [rng.permutation(n) for _ in range(n_passes - 1)]
    return perms


@dataclass
class ReconciliationReport:
    corrected_key_length: int
    bits_leaked: int
    passes: int
    residual_error_detected: bool = False
    f_r: float | None = None
    errors_corrected: int | None = None
    confirm_bits: int = 0

    def set_error_count(self, errors: int) -> None:
        self.errors_corrected = errors
        n = self.corrected_key_length
        h = binary_entropy(errors / n) if n else 0.0
        self.f_r = self.bits_leaked / (n * h) if h > 0 else None


class _Layout:
    """Block structure of every pass, shared by leader and follower."""

    def __init__(self, n: int, e_estimate: float, n_passes: int, seed: bytes):
        self.n = n
        k1 = initial_block_size(e_estimate, n)
        # Keep several blocks per pass; a single whole-key block hides every even error pattern.
        cap = max(k1, -(-n // MIN_BLOCKS))
        self.sizes = [min(k1 << p, cap, n, MAX_BLOCK) for p in range(n_passes)]
        self.perms = pass_permutations(n, n_passes, seed)
        self.pos = []
        for perm in self.perms:
            inv = np.empty(n, dtype=np.int64)
            inv[perm] = np.arange(n)
            self.pos.append(inv)

    def n_blocks(self, p: int) -> int:
        return -(-self.n // self.sizes[p])

    def span(self, p: int, node: int) -> tuple[int, int]:
        block, h = node >> NODE_BITS, node & ((1 << NODE_BITS) - 1)
        lo = block * self.sizes[p]
        hi = min(lo + self.sizes[p], self.n)
        for bit in bin(h)[3:]:
            mid = (lo + hi) // 2
            if bit == "0":
                hi = mid
            else:
                lo = mid
        return lo, hi

    def indices(self, p: int, node: int) -> np.ndarray:
        lo, hi = self.span(p, node)
        return self.perms[p][lo:hi]

    def parity(self, key: np.ndarray, p: int, node: int) -> int:
        return int(key[self.indices(p, node)].sum() & 1)


class CascadeFollower:
    """Bob's side.  ``oracle(queries)`` returns the leader's parities."""

    def __init__(self, key, e_estimate: float, n_passes: int = 4, seed: bytes = b""):
        self.key = np.array(key, dtype=np.uint8)
        self.layout = _Layout(len(self.key), e_estimate, n_passes, seed)
        self.n_passes = n_passes
        self.known: dict[tuple[int, int], int] = {}
        self.leaked = 0
        self.flips = 0
        self.passes_run = 0
        self._top_alice: list[np.ndarray] = []
        self._top_bob: list[np.ndarray] = []

    def _ask(self, oracle, queries):
        need = [q for q in dict.fromkeys(queries) if q not in self.known]
        if need:
            answers = oracle(need)
            for q, a in zip(need, answers):
                self.known[q] = int(a)
            self.leaked += len(need)

    def _flip(self, i: int) -> None:
        self.key[i] ^= 1
        self.flips += 1
        lay = self.layout
        for q in range(len(self._top_bob)):
            self._top_bob[q][lay.pos[q][i] // lay.sizes[q]] ^= 1

    def _odd_blocks(self, q: int) -> np.ndarray:
        return np.flatnonzero(self._top_alice[q] != self._top_bob[q])

    def _search(self, oracle, p: int, blocks) -> None:
        """Level-synchronous binary search inside the given odd blocks of pass p."""
        lay = self.layout
        active = [(b << NODE_BITS) | 1 for b in blocks]
        while active:
            # Drop searches whose range was made even by an earlier flip.
            active = [nd for nd in active if lay.parity(self.key, p, nd) != self.known[(p, nd)]]
            leaves = []
            inner = []
            for nd in active:
                lo, hi = lay.span(p, nd)
                (leaves if hi - lo == 1 else inner).append(nd)
            for nd in leaves:
                self._flip(int(lay.perms[p][lay.span(p, nd)[0]]))
            lefts = [(nd & ~0xFFFF) | ((nd & 0xFFFF) << 1) for nd in inner]
            self._ask(oracle, [(p, nd) for nd in lefts])
            nxt = []
            for nd, left in zip(inner, lefts):
                right = left | 1
                self.known.setdefault((p, right), self.known[(p, nd)] ^ self.known[(p, left)])
                go_left = lay.parity(self.key, p, left) != self.known[(p, left)]
                nxt.append(left if go_left else right)
            active = nxt

    def _settle(self, oracle) -> None:
        while True:
            for q in range(len(self._top_alice)):
                odd = self._odd_blocks(q)
                if len(odd):
                    self._search(oracle, q, odd.tolist())
                    break
            else:
                return

    def run(self, oracle) -> tuple[np.ndarray, ReconciliationReport]:
        lay = self.layout
        # Every pass runs: an all-even first pass does not prove the keys equal.
        for p in range(self.n_passes):
            nb = lay.n_blocks(p)
            tops = [(p, (b << NODE_BITS) | 1) for b in range(nb)]
            self._ask(oracle, tops)
            self._top_alice.append(np.array([self.known[t] for t in tops], dtype=np.uint8))
            self._top_bob.append(np.array([lay.parity(self.key, p, t[1]) for t in tops], dtype=np.uint8))
            self.passes_run += 1
            self._settle(oracle)
        report = ReconciliationReport(len(self.key), self.leaked, self.passes_run)
        report.set_error_count(self.flips)
        return self.key, report


class CascadeLeader:
    """Alice's side: answers parity queries on her fixed key."""

    def __init__(self, key, e_estimate: float, n_passes: int = 4, seed: bytes = b""):
        self.key = np.array(key, dtype=np.uint8)
        self.layout = _Layout(len(self.key), e_estimate, n_passes, seed)
        self.sent = 0

    def answer(self, queries) -> list[int]:
        self.sent += len(queries)
        return [self.layout.parity(self.key, p, node) for p, node in queries]


def local_oracle(leader: CascadeLeader):
    return leader.answer


def cascade_local(key_a, key_b, e_estimate: float, n_passes: int = 4, seed: bytes = b""):
    """Run Cascade in-process; returns Bob's corrected key and the report."""
    leader = CascadeLeader(key_a, e_estimate, n_passes, seed)
    follower = CascadeFollower(key_b, e_estimate, n_passes, seed)
    return follower.run(leader.answer)


def encode_entries(entries) -> bytes:
    return COUNT.pack(len(entries)) + b"".join(ENTRY.pack(p, node, par) for p, node, par in entries)


def decode_entries(payload: bytes) -> tuple[list[tuple[int, int, int]], bytes]:
    (count,) = COUNT.unpack_from(payload)
    end = COUNT.size + count * ENTRY.size
    body = payload[COUNT.size:end]
    if len(body) != count * ENTRY.size:
        raise ValueError("truncated reconciliation payload")
    return [ENTRY.unpack_from(body, i * ENTRY.size) for i in range(count)], payload[end:]


def reconcile(role: str, key, e_estimate: float, channel, n_passes: int = 4, seed: bytes | None = None):
    """Run Cascade over an authenticated channel.

    ``role`` is "leader" (reference key, answers queries) or "follower"
    (corrects its key).  Both sides must pass the same ``e_estimate``.
    The pass shuffles are seeded from ``seed`` or the channel's session id.
    """
    if seed is None:
        seed = getattr(channel, "session_id", b"")
    if role == "leader":
        leader = CascadeLeader(key, e_estimate, n_passes, seed)
        while True:
            entries, trailer = decode_entries(channel.expect(MsgType.RECON_REPLY))
            if not entries:
                if len(trailer) != COUNT.size + 1:
                    raise ValueError("malformed reconciliation trailer")
                (errors,) = COUNT.unpack_from(trailer)
                passes = trailer[COUNT.size]
                break
            queries = [(p, node) for p, node, _ in entries]
            answers = leader.answer(queries)
            channel.send(MsgType.RECON_PARITY, encode_entries([(p, nd, a) for (p, nd), a in zip(queries, answers)]))
        report = ReconciliationReport(len(leader.key), leader.sent, passes)
        report.set_error_count(errors)
        return leader.key.copy(), report
    if role == "follower":
        def oracle(queries):
            channel.send(MsgType.RECON_REPLY, encode_entries([(p, nd, REQUEST) for p, nd in queries]))
            entries, _ = decode_entries(channel.expect(MsgType.RECON_PARITY))
            if [(p, nd) for p, nd, _ in entries] != list(queries):
                raise ValueError("parity answers do not match the request")
            return [par for _, _, par in entries]

        follower = CascadeFollower(key, e_estimate, n_passes, seed)
        out, report = follower.run(oracle)
        channel.send(MsgType.RECON_REPLY, encode_entries([]) + COUNT.pack(follower.flips) + bytes([follower.passes_run]))
        return out, report
    raise ValueError(f"unknown role {role!r}")


def confirmation_tag(key, tag_bits: int = 256, context: bytes = b"") -> bytes:
    if tag_bits % 8 or not 0 < tag_bits <= 256:
        raise ValueError("tag_bits must be a multiple of 8 in (0, 256]")
    bits = np.asarray(key, dtype=np.uint8)
    digest = hashlib.sha256(b"memqkd-confirm|" + context + len(bits).to_bytes(4, "big") + np.packbits(bits).tobytes())
    return digest.digest()[: tag_bits // 8]


def verify_equality(role: str, key, channel, report: ReconciliationReport | None = None,
                    tag_bits: int = 256, msg_type: MsgType = MsgType.KEY_CONFIRM) -> bool:
    """Exchange hashes of ``key``; the leader speaks first.  Charges ``tag_bits`` to ``report``."""
    context = getattr(channel, "session_id", b"")
    mine = confirmation_tag(key, tag_bits, context)
    if role == "leader":
        channel.send(msg_type, mine)
        theirs = channel.expect(msg_type)
    elif role == "follower":
        theirs = channel.expect(msg_type)
        channel.send(msg_type, mine)
    else:
        raise ValueError(f"unknown role {role!r}")
    ok = hmac.compare_digest(mine, theirs)
    if report is not None:
        report.confirm_bits += tag_bits
        report.residual_error_detected = not ok
    return ok


__all__ = [
    "ConfirmMismatch", "ReconciliationReport", "binary_entropy", "cascade_local", "reconcile",
    "verify_equality",
]
