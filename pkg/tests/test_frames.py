import hashlib
import hmac
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memqkd.peers import frames as fr
from memqkd.peers.transport import SocketTransport, TransportClosed, duplex_pair, parse_addr

KEY = bytes(range(32))
SID = b"s" * 16

# RFC 4231 test cases 1 and 2 for the HMAC-SHA-256 primitive.
RFC4231 = [
    (b"\x0b" * 20, b"Hi There", "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"),
    (b"Jefe", b"what do ya want for nothing?", "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"),
]


@pytest.mark.parametrize("key, msg, tag", RFC4231)
def test_hmac_vectors(key, msg, tag):
    assert hmac.new(key, msg, hashlib.sha256).hexdigest() == tag


def test_tag_covers_header_and_payload():
    f = fr.Frame(SID, 7, fr.MsgType.HELLO, b"abc")
    expected = hmac.new(KEY, SID + (7).to_bytes(8, "big") + b"\x01" + (3).to_bytes(4, "big") + b"abc", hashlib.sha256).digest()
    assert fr.authenticate(f, KEY) == expected


@settings(max_examples=100)
@given(st.integers(0, 2**64 - 1), st.sampled_from(list(fr.MsgType)), st.binary(max_size=300))
def test_encode_decode_roundtrip(seq, mtype, payload):
    f = fr.Frame(SID, seq, mtype, payload).signed(KEY)
    g = fr.Frame.decode(f.encode())
    assert g == f and fr.verify(g, KEY)


@settings(max_examples=100)
@given(st.binary(min_size=1, max_size=64), st.data())
def test_any_bit_flip_fails_auth(payload, data):
    raw = bytearray(fr.Frame(SID, 0, fr.MsgType.HELLO, payload).signed(KEY).encode())
    pos = data.draw(st.integers(0, len(raw) - 1))
    raw[pos] ^= 1 << data.draw(st.integers(0, 7))
    try:
        f = fr.Frame.decode(bytes(raw))
    except fr.ProtocolViolation:
        return  # length field or type field damaged
    assert not fr.verify(f, KEY)


def test_decode_rejects_malformed():
    with pytest.raises(fr.ProtocolViolation):
        fr.Frame.decode(b"short")
    good = fr.Frame(SID, 0, fr.MsgType.HELLO, b"x").signed(KEY).encode()
    with pytest.raises(fr.ProtocolViolation):
        fr.Frame.decode(good + b"!")
    bad_type = bytearray(good)
    bad_type[24] = 99
    with pytest.raises(fr.ProtocolViolation):
        fr.Frame.decode(bytes(bad_type))
    with pytest.raises(ValueError):
        fr.Frame(SID, 0, fr.MsgType.HELLO, b"").encode()


def pair(tamper=None):
    ta, tb = duplex_pair(timeout=2)
    return fr.Channel(ta, KEY, SID, tamper), fr.Channel(tb, KEY, None), ta, tb


def test_channel_exchange_and_transcript():
    a, b, _, _ = pair()
    a.send(fr.MsgType.HELLO, b"hi")
    assert b.recv(fr.MsgType.HELLO) == (fr.MsgType.HELLO, b"hi")
    assert b.session_id == SID
    b.send(fr.MsgType.HELLO, b"yo")
    assert a.expect(fr.MsgType.HELLO) == b"yo"
    assert [d for d, _ in a.transcript] == ["out", "in"]
    assert [f.sequence for _, f in b.transcript] == [0, 0]


def test_responder_cannot_speak_first():
    _, b, _, _ = pair()
    with pytest.raises(fr.ProtocolViolation):
        b.send(fr.MsgType.HELLO)


def test_tampered_frame_raises_auth_failure():
    def flip(data):
        d = bytearray(data)
        d[-40] ^= 1
        return bytes(d)

    a, b, _, _ = pair(tamper=flip)
    a.send(fr.MsgType.HELLO, b"0123456789")
    with pytest.raises(fr.AuthFailure):
        b.recv()


def test_wrong_key_raises_auth_failure():
    ta, tb = duplex_pair(timeout=2)
    a = fr.Channel(ta, KEY, SID)
    b = fr.Channel(tb, bytes(32), None)
    a.send(fr.MsgType.HELLO)
    with pytest.raises(fr.AuthFailure):
        b.recv()


def test_replay_rejected():
    a, b, ta, _ = pair()
    a.send(fr.MsgType.HELLO, b"once")
    b.recv()
    ta.send(a.transcript[0][1].encode())
    with pytest.raises(fr.ProtocolViolation, match="sequence"):
        b.recv()


def test_out_of_order_rejected():
    a, b, ta, _ = pair()
    ta.send(fr.Frame(SID, 1, fr.MsgType.HELLO, b"").signed(KEY).encode())
    with pytest.raises(fr.ProtocolViolation):
        b.recv()


def test_foreign_session_rejected():
    a, b, ta, _ = pair()
    a.send(fr.MsgType.HELLO)
    b.recv()
    ta.send(fr.Frame(b"o" * 16, 1, fr.MsgType.HELLO, b"").signed(KEY).encode())
    with pytest.raises(fr.ProtocolViolation, match="session"):
        b.recv()


def test_unexpected_type_and_abort():
    a, b, _, _ = pair()
    a.send(fr.MsgType.DONE)
    with pytest.raises(fr.ProtocolViolation):
        b.recv(fr.MsgType.HELLO)
    a.abort(fr.AbortedQber("too noisy"))
    with pytest.raises(fr.AbortedQber, match="peer aborted"):
        b.recv(fr.MsgType.HELLO)


def test_error_codes():
    assert (fr.AuthFailure.code, fr.AbortedQber.code, fr.ConfirmMismatch.code) == (3, 2, 4)


def test_queue_transport_close_and_timeout():
    ta, tb = duplex_pair(timeout=0.05)
    with pytest.raises(TransportClosed):
        tb.recv()
    ta.close()
    with pytest.raises(TransportClosed):
        tb.recv()


def test_socket_transport_roundtrip():
    ready = threading.Event()
    port = {}
    got = {}

    def server():
        t = SocketTransport.listen("127.0.0.1", 0, timeout=5, ready=lambda p: (port.setdefault("p", p), ready.set()))
        got["msg"] = t.recv()
        t.send(b"pong" * 5000)
        t.close()

    th = threading.Thread(target=server)
    th.start()
    assert ready.wait(5)
    c = SocketTransport.connect("127.0.0.1", port["p"])
    c.send(b"ping")
    assert c.recv() == b"pong" * 5000
    th.join()
    with pytest.raises(TransportClosed):
        c.recv()
    c.close()
    assert got["msg"] == b"ping"


def test_parse_addr():
    assert parse_addr("127.0.0.1:9000") == ("127.0.0.1", 9000)
    with pytest.raises(ValueError):
        parse_addr("nohost")
