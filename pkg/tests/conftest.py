import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evomask.core import make_image


class CannedDetector:
    """Deterministic detector mapping image bytes to fixed box lists."""

    concurrency = "safe"

    def __init__(self, mapping=None, default=()):
        self.mapping = {key: list(boxes) for key, boxes in (mapping or {}).items()}
        self.default = list(default)

    def detect(self, img):
        return list(self.mapping.get(np.asarray(img).tobytes(), self.default))


@pytest.fixture
def gray_image():
    return make_image(np.full((8, 6, 3), 100, dtype=np.uint8))


def stub_server_argv(*modes):
    """argv for the in-tests wire protocol stub server."""
    script = Path(__file__).parent / "_stub_detector.py"
    return [sys.executable, str(script), *modes]
