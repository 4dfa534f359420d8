"""Two-party BBM92 protocol: framing, transports and the peer state machines.

The session engine lives in :mod:`memqkd.peers.session`.
"""

from .frames import (
    AbortedQber,
    AuthFailure,
    Channel,
    ConfirmMismatch,
    Frame,
    MsgType,
    ProtocolError,
    ProtocolViolation,
    authenticate,
    verify,
)
from .transport import QueueTransport, SocketTransport, duplex_pair
