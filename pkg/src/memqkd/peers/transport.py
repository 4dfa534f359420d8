"""Ordered byte-message transports: an in-memory duplex pair and TCP."""

from __future__ import annotations

import queue
import socket

from .frames import LENGTH_PREFIX


class TransportClosed(ConnectionError):
    pass


class QueueTransport:
    """One end of an in-memory duplex pipe."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float | None = 30.0):
        self.inbox = inbox
        self.outbox = outbox
        self.timeout = timeout

    def send(self, data: bytes) -> None:
        self.outbox.put(bytes(data))

    def recv(self) -> bytes:
        try:
            data = self.inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportClosed("timed out waiting for peer") from None
        if data is None:
            raise TransportClosed("peer closed the pipe")
        return data

    def close(self) -> None:
        self.outbox.put(None)


def duplex_pair(timeout: float | None = 30.0) -> tuple[QueueTransport, QueueTransport]:
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return QueueTransport(b_to_a, a_to_b, timeout), QueueTransport(a_to_b, b_to_a, timeout)


class SocketTransport:
    """Length-prefixed messages over a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise TransportClosed("socket closed by peer")
            buf.extend(chunk)
        return bytes(buf)

    def send(self, data: bytes) -> None:
        self.sock.sendall(LENGTH_PREFIX.pack(len(data)) + data)

    def recv(self) -> bytes:
        (n,) = LENGTH_PREFIX.unpack(self._read_exact(LENGTH_PREFIX.size))
        return self._read_exact(n)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 30.0) -> "SocketTransport":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock)

    @classmethod
    def listen(cls, host: str, port: int, timeout: float = 60.0, ready=None) -> "SocketTransport":
        """Accept a single connection.  ``ready(port)`` fires once listening."""
        with socket.create_server((host, port)) as srv:
            srv.settimeout(timeout)
            if ready is not None:
                ready(srv.getsockname()[1])
            conn, _ = srv.accept()
        conn.settimeout(timeout)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(conn)


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host, int(port)
