"""sam-bridge: protocol server for prompted mask decoding.

Serves ``ping``/``embed``/``decode`` over length-prefixed frames (stdio or
TCP), backed either by a real segment-anything checkpoint or by a
weights-free geometric stub used for protocol conformance testing.
"""
from .framing import (
    MAX_FRAME_BYTES,
    FramingError,
    OversizeFrame,
    TruncatedFrame,
    encode_frame,
    read_frame,
    write_message,
)
from .oracle import NoObjectMatch, OracleModel, Proposal
from .server import BridgeSession, serve_connection, serve_stdio, serve_tcp

__version__ = "0.1.0"
