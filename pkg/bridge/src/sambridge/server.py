"""Request dispatch for the inference protocol, over stdio or TCP.

Each connection holds its own session: ``embed`` stores the computed
feature tensor under a fresh ``embedding_id`` (bounded LRU, 8 entries) and
replies with the advertised geometry plus the tensor frame; ``decode``
resolves features by id or accepts them inline, runs prompted decoding,
and replies with one scored mask frame per proposal. Malformed control
frames get an in-band ``{"error": ...}`` reply and the connection stays
up; stream-level corruption (truncated or oversize frames) gets an error
reply and then the connection closes, since the stream position is
unrecoverable. Responses are always well-framed.
"""
from __future__ import annotations

import json
import socket
import sys
import threading
from collections import OrderedDict
from typing import BinaryIO, Optional

import numpy as np

from .framing import (
    MAX_FRAME_BYTES,
    OversizeFrame,
    TruncatedFrame,
    read_frame,
    write_message,
)
from .oracle import NoObjectMatch

EMBEDDING_CACHE_SIZE = 8


class ProtocolError(Exception):
    """Bad request content; replied in-band with the given code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class BridgeSession:
    """Per-connection state: the model handle plus an embedding LRU."""

    def __init__(self, model, cache_size: int = EMBEDDING_CACHE_SIZE):
        self.model = model
        self.cache_size = cache_size
        self._embeddings: OrderedDict[str, tuple[np.ndarray, float]] = OrderedDict()
        self._next_id = 0

    def store(self, features: np.ndarray, stride: float) -> str:
        self._next_id += 1
        embedding_id = f"e{self._next_id}"
        self._embeddings[embedding_id] = (features, stride)
        while len(self._embeddings) > self.cache_size:
            self._embeddings.popitem(last=False)
        return embedding_id

    def fetch(self, embedding_id: str) -> tuple[np.ndarray, float]:
        try:
            entry = self._embeddings[embedding_id]
        except KeyError:
            raise ProtocolError(
                "unknown_embedding", f"no embedding {embedding_id!r} in this session"
            ) from None
        self._embeddings.move_to_end(embedding_id)
        return entry


def _require(header: dict, key: str):
    try:
        return header[key]
    except KeyError:
        raise ProtocolError("bad_request", f"missing field {key!r}") from None


def _read_announced(reader: BinaryIO, announced: int, what: str) -> bytes:
    if announced < 0 or announced > MAX_FRAME_BYTES:
        raise ProtocolError("bad_request", f"implausible {what} size {announced}")
    frame = read_frame(reader)
    if frame is None:
        raise TruncatedFrame(f"stream ended before the {what} frame")
    if len(frame) != announced:
        raise ProtocolError(
            "bad_request",
            f"{what} frame has {len(frame)} bytes, expected {announced}",
        )
    return frame


class ConnectionHandler:
    """Serves one connection until EOF."""

    def __init__(self, model, reader: BinaryIO, writer: BinaryIO):
        self.session = BridgeSession(model)
        self.reader = reader
        self.writer = writer

    def serve(self) -> None:
        while True:
            try:
                payload = read_frame(self.reader)
            except TruncatedFrame as exc:
                self._reply_error("truncated", str(exc))
                return
            except OversizeFrame as exc:
                self._reply_error("oversize", str(exc))
                return
            if payload is None:
                return
            try:
                self._dispatch(payload)
            except ProtocolError as exc:
                self._reply_error(exc.code, str(exc))
            except (TruncatedFrame, OversizeFrame) as exc:
                self._reply_error("truncated", str(exc))
                return
            except NoObjectMatch as exc:
                self._reply_error("no_object", str(exc))
            except Exception as exc:  # fatal model failure: reply, then close
                self._reply_error("internal", str(exc))
                return

    def _reply_error(self, code: str, message: str) -> None:
        try:
            write_message(self.writer, {"error": code, "message": message})
        except OSError:
            pass

    def _dispatch(self, payload: bytes) -> None:
        try:
            header = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError("bad_request", f"control frame is not JSON: {exc}")
        if not isinstance(header, dict):
            raise ProtocolError("bad_request", "control frame must be a JSON object")
        op = header.get("op")
        if op == "ping":
            write_message(self.writer, {"ok": True})
        elif op == "embed":
            self._handle_embed(header)
        elif op == "decode":
            self._handle_decode(header)
        else:
            raise ProtocolError("bad_request", f"unknown op {op!r}")

    def _handle_embed(self, header: dict) -> None:
        height = int(_require(header, "height"))
        width = int(_require(header, "width"))
        channels = int(_require(header, "channels"))
        announced = int(_require(header, "payload_bytes"))
        raw = _read_announced(self.reader, announced, "image")
        if channels != 3 or height < 1 or width < 1:
            raise ProtocolError("bad_request", "embed expects an RGB image")
        if len(raw) != height * width * 3:
            raise ProtocolError("bad_request", "image byte count mismatch")
        image = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
        features = self.model_embed(image)
        stride = float(self.session.model.stride)
        embedding_id = self.session.store(features, stride)
        tensor = np.ascontiguousarray(features, dtype="<f4").tobytes()
        write_message(
            self.writer,
            {
                "ok": True,
                "embedding_id": embedding_id,
                "height_f": features.shape[0],
                "width_f": features.shape[1],
                "channels": features.shape[2],
                "stride": stride,
                "payload_bytes": len(tensor),
            },
            tensor,
        )

    def model_embed(self, image: np.ndarray) -> np.ndarray:
        features = self.session.model.embed(image)
        if features.ndim != 3:
            raise ProtocolError("internal", "model produced a non-3D embedding")
        return features

    def _handle_decode(self, header: dict) -> None:
        inline = header.get("features")
        if inline is not None:
            if not isinstance(inline, dict):
                raise ProtocolError("bad_request", "features must be an object")
            height_f = int(_require(inline, "height_f"))
            width_f = int(_require(inline, "width_f"))
            channels = int(_require(inline, "channels"))
            stride = float(_require(inline, "stride"))
            announced = int(_require(inline, "payload_bytes"))
            raw = _read_announced(self.reader, announced, "features")
            if len(raw) != height_f * width_f * channels * 4:
                raise ProtocolError("bad_request", "feature byte count mismatch")
            features = (
                np.frombuffer(raw, dtype="<f4")
                .reshape(height_f, width_f, channels)
                .astype(np.float32)
            )
        else:
            embedding_id = str(_require(header, "embedding_id"))
            features, stride = self.session.fetch(embedding_id)
        mask_head = header.get("mask_prompt")
        mask_prompt = None
        if mask_head is not None:
            if not isinstance(mask_head, dict):
                raise ProtocolError("bad_request", "mask_prompt must be an object")
            m_h = int(_require(mask_head, "height"))
            m_w = int(_require(mask_head, "width"))
            announced = int(_require(mask_head, "payload_bytes"))
            raw = _read_announced(self.reader, announced, "mask prompt")
            if len(raw) != m_h * m_w:
                raise ProtocolError("bad_request", "mask byte count mismatch")
            mask_prompt = np.frombuffer(raw, dtype=np.uint8).reshape(m_h, m_w) != 0
        points_doc = header.get("points", [])
        if not isinstance(points_doc, list):
            raise ProtocolError("bad_request", "points must be a list")
        points = []
        for entry in points_doc:
            try:
                points.append(
                    (int(entry["x"]), int(entry["y"]), bool(entry["positive"]))
                )
            except (KeyError, TypeError, ValueError):
                raise ProtocolError("bad_request", "malformed point entry") from None
        box_doc = header.get("box")
        box = None
        if box_doc is not None:
            try:
                x0, y0, x1, y1 = (int(v) for v in box_doc)
            except (TypeError, ValueError):
                raise ProtocolError("bad_request", "malformed box") from None
            box = (x0, y0, x1, y1)
        requested = int(header.get("proposals_requested", 3))
        if requested < 1 or requested > 64:
            raise ProtocolError("bad_request", "proposals_requested out of range")
        proposals = self.session.model.decode(
            features, points, box, mask_prompt, requested
        )
        frames = [p.mask.astype(np.uint8).tobytes() for p in proposals]
        height, width = proposals[0].mask.shape
        write_message(
            self.writer,
            {
                "ok": True,
                "height": height,
                "width": width,
                "proposals": [
                    {"score": round(p.score, 6), "payload_bytes": len(f)}
                    for p, f in zip(proposals, frames)
                ],
            },
            *frames,
        )


def serve_connection(model, reader: BinaryIO, writer: BinaryIO) -> None:
    ConnectionHandler(model, reader, writer).serve()


def serve_stdio(model) -> None:
    serve_connection(model, sys.stdin.buffer, sys.stdout.buffer)


def serve_tcp(model_factory, host: str, port: int, ready_event=None) -> None:
    """Accept connections forever, one session per connection."""
    listener = socket.create_server((host, port))
    if ready_event is not None:
        ready_event.set()
    with listener:
        while True:
            conn, _ = listener.accept()
            thread = threading.Thread(
                target=_serve_socket, args=(model_factory(), conn), daemon=True
            )
            thread.start()


def _serve_socket(model, conn: socket.socket) -> None:
    reader = conn.makefile("rb")
    writer = conn.makefile("wb")
    try:
        serve_connection(model, reader, writer)
    finally:
        try:
            writer.close()
            reader.close()
        except OSError:
            pass
        conn.close()
