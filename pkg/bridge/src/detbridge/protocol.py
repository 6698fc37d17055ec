"""Wire protocol v1 records: newline-delimited UTF-8 JSON, one per line.

Record shapes (unknown fields are ignored on receipt):

* ``{"type":"hello","version":1}`` -> ``{"type":"hello","version":1,"name":...}``
* ``{"type":"detect","id":N,"height":L,"width":W,"pixels":<base64 RGB>}``
* ``{"type":"detections","id":N,"boxes":[{"cl":...,"x":...,"y":...,"l":...,"w":...}]}``
* ``{"type":"error","id":N-or-null,"message":...}``

``cl`` 0 is reserved for a prediction that holds no object.
"""

from __future__ import annotations

import base64
import binascii
import json

PROTOCOL_VERSION = 1


class ProtocolError(ValueError):
    """A record that cannot be honoured; carries the reply-error message."""

    def __init__(self, message: str, request_id=None):
        super().__init__(message)
        self.request_id = request_id


def encode(record: dict) -> bytes:
    return json.dumps(record, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_line(line: bytes) -> dict:
    try:
        record = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable record: {exc}") from exc
    if not isinstance(record, dict) or not isinstance(record.get("type"), str):
        raise ProtocolError("record must be an object with a string 'type'")
    return record


def hello_reply(name: str) -> dict:
    return {"type": "hello", "version": PROTOCOL_VERSION, "name": name}


def detections_reply(request_id: int, boxes) -> dict:
    return {
        "type": "detections",
        "id": request_id,
        "boxes": [
            {"cl": int(cl), "x": float(x), "y": float(y), "l": float(l), "w": float(w)}
            for cl, x, y, l, w in boxes
        ],
    }


def error_reply(message: str, request_id=None) -> dict:
    return {"type": "error", "id": request_id, "message": message}


def parse_detect(record: dict) -> tuple[int, int, int, bytes]:
    """(id, height, width, pixel bytes) from a detect record, validated."""
    request_id = record.get("id")
    if not isinstance(request_id, int) or isinstance(request_id, bool) or request_id < 0:
        raise ProtocolError("detect record needs a nonnegative integer id")
    height = record.get("height")
    width = record.get("width")
    if not isinstance(height, int) or not isinstance(width, int) or height < 1 or width < 1:
        raise ProtocolError("detect record needs integer height/width >= 1", request_id)
    pixels = record.get("pixels")
    if not isinstance(pixels, str):
        raise ProtocolError("detect record needs a base64 'pixels' string", request_id)
    try:
        raw = base64.b64decode(pixels, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ProtocolError(f"pixels payload is not valid base64: {exc}", request_id) from exc
    expected = height * width * 3
    if len(raw) != expected:
        raise ProtocolError(
            f"pixels payload holds {len(raw)} bytes, expected {expected}", request_id
        )
    return request_id, height, width, raw
