"""Length-prefixed wire protocol for out-of-process segmenter backends.

Framing: every message is a frame of a 4-byte little-endian unsigned
length followed by that many payload bytes. Control payloads are UTF-8
JSON; binary tensors travel as separate raw frames announced by a
``payload_bytes`` field in the preceding JSON message, one raw frame per
announcement, in field order.

Requests carry ``"op"`` in {"ping", "embed", "decode"}:

- ``{"op": "ping"}`` -> ``{"ok": true}``
- ``{"op": "embed", "height": H, "width": W, "channels": 3,
  "payload_bytes": N}`` + one frame of N bytes (RGB8, row-major) ->
  ``{"ok": true, "embedding_id": ID, "height_f": Hf, "width_f": Wf,
  "channels": C, "stride": s, "payload_bytes": M}`` + one frame of
  little-endian float32 features, row-major (Hf, Wf, C).
- ``{"op": "decode", "embedding_id": ID | "features": {header},
  "proposals_requested": K, "points": [{"x", "y", "positive"}],
  "box": [x0, y0, x1, y1] | null, "mask_prompt": {header} | null}``
  followed by the announced frames (inline features first, then mask
  prompt bytes as 0/1 uint8) ->
  ``{"ok": true, "height": H, "width": W, "proposals":
  [{"score": s, "payload_bytes": n}, ...]}`` + one 0/1 uint8 frame per
  proposal.

Errors come back in-band as ``{"error": code, "message": text}``; the
client maps ``"no_object"`` to NoObject and everything else to
BackendFailure. Servers are stateful per connection: ``embed`` yields an
``embedding_id`` the following ``decode`` calls may reference instead of
re-uploading the tensor; passing inline features skips that state.

Feature tensors persisted to disk use: magic ``UOFT``, u32 version=1,
u32 ndim, ndim x u32 dims, then little-endian float32 data (all integers
little-endian).
"""
from __future__ import annotations

import json
import shlex
import socket
import struct
import subprocess
from pathlib import Path
from typing import BinaryIO, Optional, Sequence

import numpy as np

from .core import BinaryMask, BoxPrompt, FeatureMap, Image, MaskProposal, PromptSet
from .errors import BackendFailure, NoObject, Oversize, TensorFormatError, Truncated
from .segmenter import DecodeRequest, SegmenterBackend

MAX_FRAME_BYTES = 256 * 1024 * 1024
_HEADER = struct.Struct("<I")
TENSOR_MAGIC = b"UOFT"
TENSOR_VERSION = 1


def encode_frame(payload: bytes) -> bytes:
    """Prefix a payload with its 4-byte little-endian length."""
    if len(payload) >= 2**32:
        raise Oversize(f"payload of {len(payload)} bytes cannot be framed")
    return _HEADER.pack(len(payload)) + payload


def read_exact(stream: BinaryIO, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            raise Truncated(f"stream ended {remaining} bytes short")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def decode_frame(stream: BinaryIO, max_bytes: int = MAX_FRAME_BYTES) -> bytes:
    """Read one frame; raises Truncated on short reads, Oversize on huge ones."""
    header = read_exact(stream, _HEADER.size)
    (length,) = _HEADER.unpack(header)
    if length > max_bytes:
        raise Oversize(f"frame of {length} bytes exceeds the {max_bytes}-byte cap")
    if length == 0:
        return b""
    return read_exact(stream, length)


def try_decode_frame(
    stream: BinaryIO, max_bytes: int = MAX_FRAME_BYTES
) -> Optional[bytes]:
    """Like decode_frame, but returns None on a clean end-of-stream."""
    first = stream.read(1)
    if not first:
        return None
    header = first + read_exact(stream, _HEADER.size - 1)
    (length,) = _HEADER.unpack(header)
    if length > max_bytes:
        raise Oversize(f"frame of {length} bytes exceeds the {max_bytes}-byte cap")
    if length == 0:
        return b""
    return read_exact(stream, length)


def write_message(stream: BinaryIO, header: dict, *frames: bytes) -> None:
    payload = json.dumps(header, separators=(",", ":")).encode("utf-8")
    stream.write(encode_frame(payload))
    for frame in frames:
        stream.write(encode_frame(frame))
    stream.flush()


def read_json_frame(stream: BinaryIO, max_bytes: int = MAX_FRAME_BYTES) -> dict:
    payload = decode_frame(stream, max_bytes)
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BackendFailure(f"peer sent a non-JSON control frame: {exc}") from exc
    if not isinstance(message, dict):
        raise BackendFailure("peer sent a non-object control frame")
    return message


def save_feature_tensor(path: Path | str, data: np.ndarray) -> None:
    """Write an array in the UOFT on-disk tensor format."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(_HEADER.pack(TENSOR_VERSION))
        fh.write(_HEADER.pack(arr.ndim))
        for dim in arr.shape:
            fh.write(_HEADER.pack(dim))
        fh.write(arr.tobytes())


def load_feature_tensor(path: Path | str) -> np.ndarray:
    """Read a UOFT tensor file back into a float32 array."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TENSOR_MAGIC:
            raise TensorFormatError(f"bad magic {magic!r}")
        (version,) = _HEADER.unpack(read_exact(fh, 4))
        if version != TENSOR_VERSION:
            raise TensorFormatError(f"unsupported version {version}")
        (ndim,) = _HEADER.unpack(read_exact(fh, 4))
        if ndim < 1 or ndim > 8:
            raise TensorFormatError(f"implausible ndim {ndim}")
        dims = [
            _HEADER.unpack(read_exact(fh, 4))[0] for _ in range(ndim)
        ]
        expected = int(np.prod(dims)) * 4
        raw = fh.read(expected + 1)
        if len(raw) != expected:
            raise TensorFormatError(
                f"expected {expected} data bytes, found {len(raw)}"
            )
        return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)


def _points_payload(prompts: PromptSet) -> list[dict]:
    return [{"x": p.x, "y": p.y, "positive": p.positive} for p in prompts.points]


class BridgeBackend(SegmenterBackend):
    """Client half of the wire protocol, presenting the backend contract.

    One client owns one connection and must not be shared across threads;
    callers needing parallelism pool one client per worker.
    """

    max_concurrent_requests = 1

    def __init__(
        self,
        reader: BinaryIO,
        writer: BinaryIO,
        name: str = "bridge",
        inline_features: bool = False,
        close_hook=None,
    ):
        self.name = name
        self.inline_features = inline_features
        self._reader = reader
        self._writer = writer
        self._close_hook = close_hook
        # id(FeatureMap) -> (strong ref, server-side embedding id)
        self._embeddings: dict[int, tuple[FeatureMap, str]] = {}

    @classmethod
    def spawn_stdio(cls, command: str | Sequence[str], **kwargs) -> "BridgeBackend":
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
        )

        def close():
            try:
                proc.stdin.close()
            except OSError:
                pass
            proc.wait(timeout=10)

        return cls(proc.stdout, proc.stdin, close_hook=close, **kwargs)

    @classmethod
    def connect_tcp(cls, host: str, port: int, **kwargs) -> "BridgeBackend":
        sock = socket.create_connection((host, port))
        reader = sock.makefile("rb")
        writer = sock.makefile("wb")

        def close():
            reader.close()
            writer.close()
            sock.close()

        return cls(reader, writer, close_hook=close, **kwargs)

    def close(self) -> None:
        if self._close_hook is not None:
            self._close_hook()
            self._close_hook = None

    def __enter__(self) -> "BridgeBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _roundtrip(self, header: dict, *frames: bytes) -> dict:
        try:
            write_message(self._writer, header, *frames)
            reply = read_json_frame(self._reader)
        except (OSError, ValueError, Truncated, Oversize) as exc:
            raise BackendFailure(f"bridge transport failed: {exc}") from exc
        if "error" in reply:
            code = reply.get("error")
            message = reply.get("message", "")
            if code == "no_object":
                raise NoObject(message or "no object matches the given prompts")
            raise BackendFailure(f"server error {code}: {message}")
        return reply

    def ping(self) -> bool:
        reply = self._roundtrip({"op": "ping"})
        return bool(reply.get("ok"))

    def embed(self, image: Image) -> FeatureMap:
        raw = image.data.tobytes()
        reply = self._roundtrip(
            {
                "op": "embed",
                "height": image.height,
                "width": image.width,
                "channels": 3,
                "payload_bytes": len(raw),
            },
            raw,
        )
        try:
            height_f = int(reply["height_f"])
            width_f = int(reply["width_f"])
            channels = int(reply["channels"])
            stride = float(reply["stride"])
            payload_bytes = int(reply["payload_bytes"])
            embedding_id = str(reply["embedding_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendFailure(f"malformed embed reply: {exc}") from exc
        try:
            frame = decode_frame(self._reader)
        except (Truncated, Oversize) as exc:
            raise BackendFailure(f"bridge transport failed: {exc}") from exc
        if len(frame) != payload_bytes or payload_bytes != height_f * width_f * channels * 4:
            raise BackendFailure("embed tensor frame size mismatch")
        data = (
            np.frombuffer(frame, dtype="<f4")
            .reshape(height_f, width_f, channels)
            .astype(np.float32)
        )
        features = FeatureMap(data, stride)
        if len(self._embeddings) >= 8:
            self._embeddings.pop(next(iter(self._embeddings)))
        self._embeddings[id(features)] = (features, embedding_id)
        return features

    def decode(self, request: DecodeRequest) -> list[MaskProposal]:
        features = request.features
        prompts = request.prompts
        header: dict = {
            "op": "decode",
            "proposals_requested": request.proposals_requested,
            "points": _points_payload(prompts),
            "box": (
                [prompts.box.x_min, prompts.box.y_min, prompts.box.x_max, prompts.box.y_max]
                if prompts.box is not None
                else None
            ),
        }
        frames: list[bytes] = []
        known = self._embeddings.get(id(features))
        if known is not None and known[0] is features and not self.inline_features:
            header["embedding_id"] = known[1]
        else:
            raw = np.ascontiguousarray(features.data, dtype="<f4").tobytes()
            header["features"] = {
                "height_f": features.height_f,
                "width_f": features.width_f,
                "channels": features.channels,
                "stride": features.stride_to_image,
                "payload_bytes": len(raw),
            }
            frames.append(raw)
        if prompts.mask_prompt is not None:
            mask_raw = prompts.mask_prompt.bits.astype(np.uint8).tobytes()
            header["mask_prompt"] = {
                "height": prompts.mask_prompt.height,
                "width": prompts.mask_prompt.width,
                "payload_bytes": len(mask_raw),
            }
            frames.append(mask_raw)
        else:
            header["mask_prompt"] = None
        reply = self._roundtrip(header, *frames)
        try:
            height = int(reply["height"])
            width = int(reply["width"])
            entries = list(reply["proposals"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendFailure(f"malformed decode reply: {exc}") from exc
        proposals = []
        for entry in entries:
            try:
                score = float(entry["score"])
                payload_bytes = int(entry["payload_bytes"])
            except (KeyError, TypeError, ValueError) as exc:
                raise BackendFailure(f"malformed proposal entry: {exc}") from exc
            try:
                frame = decode_frame(self._reader)
            except (Truncated, Oversize) as exc:
                raise BackendFailure(f"bridge transport failed: {exc}") from exc
            if len(frame) != payload_bytes or payload_bytes != height * width:
                raise BackendFailure("proposal mask frame size mismatch")
            bits = np.frombuffer(frame, dtype=np.uint8).reshape(height, width) != 0
            proposals.append(MaskProposal(BinaryMask(bits), score))
        return proposals
