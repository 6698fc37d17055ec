import json
import sys

import pytest

# Two canned boxes; the echo backend must replay exactly these, in order.
CANNED_BOXES = [
    {"cl": 1, "x": 12.5, "y": 30.0, "l": 8.0, "w": 10.0},
    {"cl": 2, "x": 40.0, "y": 7.5, "l": 6.0, "w": 5.0},
]


@pytest.fixture
def fixture_path(tmp_path):
    path = tmp_path / "canned.json"
    path.write_text(json.dumps({"name": "echo-fixture", "boxes": CANNED_BOXES}))
    return path


def bridge_argv(*extra):
    return [sys.executable, "-m", "detbridge.cli", "serve", *extra]
