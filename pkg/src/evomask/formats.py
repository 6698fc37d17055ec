"""File formats: PNG images and the BFM1 filter-mask container.

BFM1 layout: 4-byte magic ``BFM1``, uint32-LE height L, uint32-LE width W,
then L*W*3 int16-LE values in row-major order with the three channels of
each pixel interleaved (R, G, B).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import make_image, make_mask

BFM_MAGIC = b"BFM1"
_BFM_HEADER = struct.Struct("<4sII")


def read_png(path) -> np.ndarray:
    """Read an 8-bit RGB PNG; any alpha channel is stripped."""
    with PILImage.open(path) as im:
        rgb = im.convert("RGB")
        return make_image(np.asarray(rgb))


def write_png(path, img: np.ndarray) -> None:
    """Write an image as PNG with pinned encoder settings."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(
        path, format="PNG", optimize=False, compress_level=6
    )


def write_bfm(path, mask: np.ndarray) -> None:
    mask = make_mask(mask)
    height, width = mask.shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_BFM_HEADER.pack(BFM_MAGIC, height, width))
        fh.write(mask.astype("<i2").tobytes())


def read_bfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_BFM_HEADER.size)
        if len(header) != _BFM_HEADER.size:
            raise ValueError(f"{path}: truncated BFM header")
        magic, height, width = _BFM_HEADER.unpack(header)
        if magic != BFM_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        payload = fh.read()
    expected = height * width * 3 * 2
    if len(payload) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    values = np.frombuffer(payload, dtype="<i2").reshape(height, width, 3)
    return make_mask(values.astype(np.int16))
