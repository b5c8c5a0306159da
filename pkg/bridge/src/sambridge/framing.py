"""Length-prefixed framing: 4-byte little-endian length, then the payload.

Control payloads are UTF-8 JSON; binary tensors travel as separate raw
frames announced by preceding ``payload_bytes`` fields, one frame per
announcement in field order.
"""
from __future__ import annotations

import json
import struct
from typing import BinaryIO, Optional

MAX_FRAME_BYTES = 256 * 1024 * 1024
_HEADER = struct.Struct("<I")


class FramingError(Exception):
    """Base for stream-level failures."""


class TruncatedFrame(FramingError):
    """The stream ended before a complete frame arrived."""


class OversizeFrame(FramingError):
    """A frame declared more bytes than the configured cap."""


def encode_frame(payload: bytes) -> bytes:
    if len(payload) >= 2**32:
        raise OversizeFrame(f"payload of {len(payload)} bytes cannot be framed")
    return _HEADER.pack(len(payload)) + payload


def _read_exact(stream: BinaryIO, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise TruncatedFrame(f"stream ended {remaining} bytes short")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(
    stream: BinaryIO, max_bytes: int = MAX_FRAME_BYTES
) -> Optional[bytes]:
    """One frame, or None at a clean end of stream."""
    first = stream.read(1)
    if not first:
        return None
    header = first + _read_exact(stream, _HEADER.size - 1)
    (length,) = _HEADER.unpack(header)
    if length > max_bytes:
        raise OversizeFrame(f"frame of {length} bytes exceeds the {max_bytes}-byte cap")
    if length == 0:
        return b""
    return _read_exact(stream, length)


def write_message(stream: BinaryIO, header: dict, *frames: bytes) -> None:
    payload = json.dumps(header, separators=(",", ":")).encode("utf-8")
    stream.write(encode_frame(payload))
    for frame in frames:
        stream.write(encode_frame(frame))
    stream.flush()
