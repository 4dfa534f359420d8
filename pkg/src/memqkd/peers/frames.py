"""Authenticated frames of the classical channel.

    frame = session_id(16) | sequence(8, BE) | msg_type(1) | payload_len(4, BE) | payload | auth_tag(32)

The tag is HMAC-SHA-256 over everything before it.  On the wire each frame
is preceded by a 4-byte big-endian length.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass

HEADER = struct.Struct(">16sQBI")
TAG_LEN = 32
LENGTH_PREFIX = struct.Struct(">I")


class MsgType(enum.IntEnum):
    HELLO = 1
    ROUND_BATCH = 2
    DETECT_REPORT = 3
    BASIS_REVEAL = 4
    SIFT_ANNOUNCE = 5
    QBER_SAMPLE = 6
    QBER_RESULT = 7
    ABORT = 8
    RECON_PARITY = 9
    RECON_REPLY = 10
    PA_SEED = 11
    KEY_CONFIRM = 12
    DONE = 13


class ProtocolError(Exception):
    """Base class for session failures; ``code`` doubles as the CLI exit code."""

    code = 1
    kind = "PROTOCOL_ERROR"


class AuthFailure(ProtocolError):
    code = 3
    kind = "AUTH_FAILURE"


class ProtocolViolation(ProtocolError):
    code = 1
    kind = "PROTOCOL_VIOLATION"


class AbortedQber(ProtocolError):
    code = 2
    kind = "ABORTED_QBER"


class ConfirmMismatch(ProtocolError):
    code = 4
    kind = "CONFIRM_MISMATCH"


ERRORS = {cls.kind: cls for cls in (ProtocolError, AuthFailure, ProtocolViolation, AbortedQber, ConfirmMismatch)}


@dataclass(frozen=True)
class Frame:
    session_id: bytes
    sequence: int
    msg_type: MsgType
    payload: bytes
    auth_tag: bytes = b""

    def header(self) -> bytes:
        return HEADER.pack(self.session_id, self.sequence, int(self.msg_type), len(self.payload))

    def signed(self, key: bytes) -> "Frame":
        return Frame(self.session_id, self.sequence, self.msg_type, self.payload, authenticate(self, key))

    def encode(self) -> bytes:
        if len(self.auth_tag) != TAG_LEN:
            raise ValueError("frame is not signed")
        return self.header() + self.payload + self.auth_tag

    @classmethod
    def decode(cls, data: bytes) -> "Frame":
        if len(data) < HEADER.size + TAG_LEN:
            raise ProtocolViolation("truncated frame")
        sid, seq, mtype, plen = HEADER.unpack_from(data)
        if len(data) != HEADER.size + plen + TAG_LEN:
            raise ProtocolViolation("frame length does not match payload_len")
        try:
            mtype = MsgType(mtype)
        except ValueError:
            raise ProtocolViolation(f"unknown msg_type {mtype}") from None
        body = data[HEADER.size:HEADER.size + plen]
        return cls(sid, seq, mtype, body, data[HEADER.size + plen:])


def authenticate(frame: Frame, key: bytes) -> bytes:
    if len(key) != 32:
        raise ValueError("authentication key must be 32 bytes")
    return hmac.new(key, frame.header() + frame.payload, hashlib.sha256).digest()


def verify(frame: Frame, key: bytes) -> bool:
    return hmac.compare_digest(authenticate(frame, key), frame.auth_tag)


class Channel:
    """One peer's authenticated view of a transport.

    Sequence numbers start at 0 and increase by one per frame in each
    direction.  Every frame sent and received is appended to ``transcript``.
    ``tamper`` is a test hook applied to outgoing encoded frames.  A
    responder passes ``session_id=None`` and adopts the id of the first
    authenticated frame it receives.
    """

    def __init__(self, transport, key: bytes, session_id: bytes | None, tamper=None):
        if session_id is not None and len(session_id) != 16:
            raise ValueError("session id must be 16 bytes")
        self.transport = transport
        self.key = key
        self.session_id = session_id
        self.send_seq = 0
        self.recv_seq = 0
        self.transcript: list[tuple[str, Frame]] = []
        self.tamper = tamper

    def send(self, msg_type: MsgType, payload: bytes = b"") -> None:
        if self.session_id is None:
            raise ProtocolViolation("session id unknown; the initiator must speak first")
        frame = Frame(self.session_id, self.send_seq, msg_type, payload).signed(self.key)
        self.send_seq += 1
        self.transcript.append(("out", frame))
        data = frame.encode()
        if self.tamper is not None:
            data = self.tamper(data)
        self.transport.send(data)

    def recv(self, *expected: MsgType) -> tuple[MsgType, bytes]:
        frame = Frame.decode(self.transport.recv())
        if not verify(frame, self.key):
            raise AuthFailure(f"bad tag on frame {frame.sequence}")
        if self.session_id is None and self.recv_seq == 0:
            self.session_id = frame.session_id
        if frame.session_id != self.session_id:
            raise ProtocolViolation("frame from another session")
        if frame.sequence != self.recv_seq:
            raise ProtocolViolation(f"expected sequence {self.recv_seq}, got {frame.sequence}")
        self.recv_seq += 1
        self.transcript.append(("in", frame))
        if frame.msg_type == MsgType.ABORT and MsgType.ABORT not in expected:
            kind, _, reason = frame.payload.decode(errors="replace").partition(":")
            raise ERRORS.get(kind, ProtocolError)(f"peer aborted: {reason or kind}")
        if expected and frame.msg_type not in expected:
            raise ProtocolViolation(f"unexpected {frame.msg_type.name}, wanted {[m.name for m in expected]}")
        return frame.msg_type, frame.payload

    def expect(self, msg_type: MsgType) -> bytes:
        return self.recv(msg_type)[1]

    def abort(self, error: ProtocolError) -> None:
        """Best-effort ABORT notification; the transport may already be gone."""
        try:
            self.send(MsgType.ABORT, f"{error.kind}:{error}".encode())
        except Exception:
            pass
