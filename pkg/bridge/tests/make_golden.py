"""Regenerate the golden transcript pair (request.bin / response.bin).

Run from the bridge directory after a deliberate protocol change:

    python3 tests/make_golden.py
"""
import io
from pathlib import Path

import numpy as np

from sambridge.framing import write_message
from sambridge.oracle import OracleModel
from sambridge.server import serve_connection

GOLDEN_DIR = Path(__file__).parent / "golden"


def golden_image() -> np.ndarray:
    image = np.zeros((12, 12, 3), dtype=np.uint8)
    image[1:6, 1:6, 0] = 1
    image[7:11, 6:11, 0] = 2
    # Palette-style green/blue channels; the red channel is what matters.
    image[:, :, 1] = (image[:, :, 0].astype(np.int64) * 101 + 97) % 256
    image[:, :, 2] = (image[:, :, 0].astype(np.int64) * 179 + 53) % 256
    return image


def build_request() -> bytes:
    image = golden_image()
    mask = (image[:, :, 0] == 1).astype(np.uint8)
    buf = io.BytesIO()
    write_message(buf, {"op": "ping"})
    write_message(
        buf,
        {
            "op": "embed",
            "height": 12,
            "width": 12,
            "channels": 3,
            "payload_bytes": image.size,
        },
        image.tobytes(),
    )
    write_message(
        buf,
        {
            "op": "decode",
            "embedding_id": "e1",
            "proposals_requested": 3,
            "points": [{"x": 2, "y": 2, "positive": True}],
            "box": None,
            "mask_prompt": None,
        },
    )
    write_message(
        buf,
        {
            "op": "decode",
            "embedding_id": "e1",
            "proposals_requested": 2,
            "points": [{"x": 0, "y": 0, "positive": True}],
            "box": [6, 7, 10, 10],
            "mask_prompt": {"height": 12, "width": 12, "payload_bytes": mask.size},
        },
        mask.tobytes(),
    )
    write_message(
        buf,
        {
            "op": "decode",
            "embedding_id": "missing",
            "proposals_requested": 1,
            "points": [{"x": 2, "y": 2, "positive": True}],
            "box": None,
            "mask_prompt": None,
        },
    )
    return buf.getvalue()


def main() -> None:
    GOLDEN_DIR.mkdir(exist_ok=True)
    request = build_request()
    out = io.BytesIO()
    serve_connection(OracleModel(), io.BytesIO(request), out)
    (GOLDEN_DIR / "request.bin").write_bytes(request)
    (GOLDEN_DIR / "response.bin").write_bytes(out.getvalue())
    print(f"wrote {len(request)} request bytes, {out.tell()} response bytes")


if __name__ == "__main__":
    main()
