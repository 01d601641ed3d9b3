"""Message transport between containers: in-process channels and TCP sockets."""

from __future__ import annotations

from .inprocess import InProcessMesh, CoopScheduler
from .wire import WireEnvelope, encode_envelope, decode_envelope

__all__ = ["InProcessMesh", "CoopScheduler", "WireEnvelope",
           "encode_envelope", "decode_envelope"]
