"""Bridge client against a minimal in-test protocol server."""
import json
import socket
import threading

import numpy as np
import pytest

from maskrefine.core import BoxPrompt, FeatureMap, Image, PointPrompt, PromptSet
from maskrefine.errors import BackendFailure, NoObject
from maskrefine.segmenter import DecodeRequest, OracleBackend, render_label_map
from maskrefine.core import BinaryMask, LabelMap
from maskrefine.wire import (
    BridgeBackend,
    encode_frame,
    read_json_frame,
    try_decode_frame,
    write_message,
)


class MiniServer(threading.Thread):
    """Speaks the wire protocol over a socket, backed by the mock oracle."""

    def __init__(self, conn):
        super().__init__(daemon=True)
        self.conn = conn
        self.backend = OracleBackend()
        self.embeddings = {}
        self.next_id = 0

    def run(self):
        reader = self.conn.makefile("rb")
        writer = self.conn.makefile("wb")
        try:
            while True:
                payload = try_decode_frame(reader)
                if payload is None:
                    return
                request = json.loads(payload.decode("utf-8"))
                op = request.get("op")
                if op == "ping":
                    write_message(writer, {"ok": True})
                elif op == "embed":
                    raw = try_decode_frame(reader)
                    h, w = request["height"], request["width"]
                    image = Image(
                        np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
                    )
                    features = self.backend.embed(image)
                    self.next_id += 1
                    eid = f"e{self.next_id}"
                    self.embeddings[eid] = features
                    tensor = np.ascontiguousarray(
                        features.data, dtype="<f4"
                    ).tobytes()
                    write_message(
                        writer,
                        {
                            "ok": True,
                            "embedding_id": eid,
                            "height_f": features.height_f,
                            "width_f": features.width_f,
                            "channels": features.channels,
                            "stride": features.stride_to_image,
                            "payload_bytes": len(tensor),
                        },
                        tensor,
                    )
                elif op == "decode":
                    if "features" in request and request["features"] is not None:
                        head = request["features"]
                        raw = try_decode_frame(reader)
                        features = FeatureMap(
                            np.frombuffer(raw, dtype="<f4")
                            .reshape(head["height_f"], head["width_f"], head["channels"])
                            .astype(np.float32),
                            head["stride"],
                        )
                    else:
                        features = self.embeddings.get(request.get("embedding_id"))
                        if features is None:
                            write_message(
                                writer, {"error": "unknown_embedding", "message": ""}
                            )
                            continue
                    mask_head = request.get("mask_prompt")
                    mask_prompt = None
                    if mask_head is not None:
                        raw = try_decode_frame(reader)
                        mask_prompt = BinaryMask(
                            np.frombuffer(raw, dtype=np.uint8).reshape(
                                mask_head["height"], mask_head["width"]
                            )
                            != 0
                        )
                    points = tuple(
                        PointPrompt(p["x"], p["y"], p["positive"])
                        for p in request["points"]
                    )
                    box = request.get("box")
                    prompts = PromptSet(
                        points=points,
                        box=BoxPrompt(*box) if box else None,
                        mask_prompt=mask_prompt,
                    )
                    try:
                        proposals = self.backend.decode(
                            DecodeRequest(
                                features, prompts, request["proposals_requested"]
                            )
                        )
                    except NoObject as exc:
                        write_message(
                            writer, {"error": "no_object", "message": str(exc)}
                        )
                        continue
                    frames = [
                        p.mask.bits.astype(np.uint8).tobytes() for p in proposals
                    ]
                    write_message(
                        writer,
                        {
                            "ok": True,
                            "height": proposals[0].mask.height,
                            "width": proposals[0].mask.width,
                            "proposals": [
                                {"score": p.score, "payload_bytes": len(f)}
                                for p, f in zip(proposals, frames)
                            ],
                        },
                        *frames,
                    )
                else:
                    write_message(
                        writer, {"error": "bad_request", "message": f"op {op!r}"}
                    )
        except Exception:
            pass
        finally:
            self.conn.close()


@pytest.fixture
def bridge():
    client_sock, server_sock = socket.socketpair()
    server = MiniServer(server_sock)
    server.start()
    reader = client_sock.makefile("rb")
    writer = client_sock.makefile("wb")

    def close():
        reader.close()
        writer.close()
        client_sock.close()

    backend = BridgeBackend(reader, writer, close_hook=close)
    yield backend
    backend.close()


def scene():
    labels = np.zeros((24, 24), dtype=np.uint8)
    labels[4:12, 4:12] = 1
    labels[16:22, 14:22] = 2
    lm = LabelMap(labels)
    return lm, render_label_map(lm)


class TestBridgeClient:
    def test_ping(self, bridge):
        assert bridge.ping()

    def test_embed_advertised_dims(self, bridge):
        _, image = scene()
        features = bridge.embed(image)
        assert (features.height_f, features.width_f, features.channels) == (24, 24, 3)
        assert features.stride_to_image == 1.0

    def test_matches_in_process_backend(self, bridge):
        lm, image = scene()
        local = OracleBackend()
        remote_feats = bridge.embed(image)
        local_feats = local.embed(image)
        assert (remote_feats.data == local_feats.data).all()
        prompts = PromptSet(points=(PointPrompt(6, 6),))
        remote = bridge.decode(DecodeRequest(remote_feats, prompts))
        local_props = local.decode(DecodeRequest(local_feats, prompts))
        assert [p.score for p in remote] == [p.score for p in local_props]
        for r, l in zip(remote, local_props):
            assert (r.mask.bits == l.mask.bits).all()

    def test_mask_prompt_round_trip(self, bridge):
        lm, image = scene()
        features = bridge.embed(image)
        prompts = PromptSet(
            points=(PointPrompt(6, 6),),
            box=BoxPrompt(4, 4, 11, 11),
            mask_prompt=BinaryMask(lm.labels == 1),
        )
        props = bridge.decode(DecodeRequest(features, prompts))
        assert (props[0].mask.bits == (lm.labels == 1)).all()

    def test_inline_features(self):
        client_sock, server_sock = socket.socketpair()
        MiniServer(server_sock).start()
        reader = client_sock.makefile("rb")
        writer = client_sock.makefile("wb")
        backend = BridgeBackend(
            reader, writer, inline_features=True,
            close_hook=lambda: (reader.close(), writer.close(), client_sock.close()),
        )
        lm, image = scene()
        local_feats = OracleBackend().embed(image)
        # Features the server never saw: must travel inline.
        props = backend.decode(
            DecodeRequest(local_feats, PromptSet(points=(PointPrompt(6, 6),)))
        )
        assert (props[0].mask.bits == (lm.labels == 1)).all()
        backend.close()

    def test_no_object_maps_to_exception(self, bridge):
        _, image = scene()
        features = bridge.embed(image)
        with pytest.raises(NoObject):
            bridge.decode(
                DecodeRequest(features, PromptSet(points=(PointPrompt(0, 0),)))
            )

    def test_server_error_maps_to_backend_failure(self, bridge):
        # Reference an embedding the server does not know.
        _, image = scene()
        features = OracleBackend().embed(image)
        bridge._embeddings[id(features)] = (features, "bogus")
        with pytest.raises(BackendFailure):
            bridge.decode(
                DecodeRequest(features, PromptSet(points=(PointPrompt(6, 6),)))
            )
